//! Global prototype codebook: nearest-neighbour quantization of slots,
//! duplicate pruning, EMA k-means prototype updates, and revival of
//! prototypes that have gone unused past a timeout.
//!
//! Prototypes are plain tensors and never enter a tape, so no gradient can
//! reach them by construction. The codebook is mutable shared state with a
//! single-writer contract: forwards read a consistent snapshot, the training
//! loop's update phase is the only mutator.

use crate::rng::Rng;
use crate::tensor::{cosine_distance, Tensor};
use crate::{real, CoreError, Real, Result};

/// Binary per-slot retention mask plus the prototype index of each slot.
///
/// Among retained entries idx values are pairwise distinct; for every
/// duplicated idx value exactly the first occurrence is retained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotMask {
    flags: Vec<bool>,
    idx: Vec<usize>,
}

impl SlotMask {
    pub fn new(flags: Vec<bool>, idx: Vec<usize>) -> Result<Self> {
        if flags.len() != idx.len() {
            return Err(CoreError::shape("slot_mask", "flags/idx length mismatch"));
        }
        if !flags.iter().any(|&f| f) {
            return Err(CoreError::invalid("slot_mask", "at least one slot must be retained"));
        }
        Ok(SlotMask { flags, idx })
    }

    /// All-ones mask with the given prototype indices.
    pub fn all_retained(idx: Vec<usize>) -> Self {
        SlotMask {
            flags: vec![true; idx.len()],
            idx,
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn idx(&self) -> &[usize] {
        &self.idx
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn retained(&self, slot: usize) -> bool {
        self.flags[slot]
    }

    /// Number of retained slots.
    pub fn active_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Indices of retained slots in slot order.
    pub fn retained_slots(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|&i| self.flags[i]).collect()
    }
}

/// How the EMA update assigns retained slots to prototypes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmaAssignment {
    /// Re-quantize the final slots (one k-means assignment step). Default.
    Requantize,
    /// Reuse the first-stage quantization indices.
    Stage1Idx,
}

/// The global prototype set with usage bookkeeping.
#[derive(Clone, Debug)]
pub struct PrototypeCodebook<T> {
    vectors: Tensor<T>,
    last_used_step: Vec<u64>,
    ema_rate: f64,
    timeout: u64,
}

impl<T: Real> PrototypeCodebook<T> {
    pub fn new(vectors: Tensor<T>, last_used_step: Vec<u64>, ema_rate: f64, timeout: u64) -> Result<Self> {
        if last_used_step.len() != vectors.rows() {
            return Err(CoreError::shape(
                "codebook",
                "usage bookkeeping length must match prototype count",
            ));
        }
        if !(ema_rate > 0.0 && ema_rate <= 1.0) {
            return Err(CoreError::invalid(
                "codebook",
                format!("ema rate {ema_rate} outside (0, 1]"),
            ));
        }
        if !vectors.all_finite() {
            return Err(CoreError::NonFinite { op: "codebook" });
        }
        Ok(PrototypeCodebook {
            vectors,
            last_used_step,
            ema_rate,
            timeout,
        })
    }

    /// Prototypes sampled i.i.d. from N(0, scale^2), usage cleared.
    pub fn init(rng: &mut Rng, k_protos: usize, dim: usize, scale: f64, ema_rate: f64, timeout: u64) -> Result<Self> {
        let data = (0..k_protos * dim)
            .map(|_| real::<T>(rng.normal_f64() * scale))
            .collect();
        PrototypeCodebook::new(
            Tensor::from_vec(k_protos, dim, data)?,
            vec![0; k_protos],
            ema_rate,
            timeout,
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Tensor<T> {
        &self.vectors
    }

    pub fn prototype(&self, k: usize) -> &[T] {
        self.vectors.row(k)
    }

    pub fn last_used_step(&self) -> &[u64] {
        &self.last_used_step
    }

    pub fn ema_rate(&self) -> f64 {
        self.ema_rate
    }

    pub fn timeout(&self) -> u64 {
        self.timeout
    }

    fn is_dead(&self, k: usize, step: u64) -> bool {
        step.saturating_sub(self.last_used_step[k]) > self.timeout
    }

    /// Nearest prototype index for one slot vector (ties break to the lowest
    /// index, which keeps runs reproducible).
    pub fn nearest(&self, slot: &[T]) -> usize {
        let mut best = 0;
        let mut best_dist = T::infinity();
        for k in 0..self.len() {
            let mut dist = T::zero();
            for (a, b) in slot.iter().zip(self.prototype(k)) {
                let d = *a - *b;
                dist = dist + d * d;
            }
            if dist < best_dist {
                best_dist = dist;
                best = k;
            }
        }
        best
    }
}

/// Replaces every slot by its nearest prototype. Returns the quantized slot
/// matrix and the per-slot prototype indices. Inputs and outputs are plain
/// values: the lookup is a gradient barrier by construction.
pub fn quantize<T: Real>(
    slots: &Tensor<T>,
    codebook: &PrototypeCodebook<T>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if codebook.is_empty() {
        return Err(CoreError::invalid("quantize", "empty codebook"));
    }
    if slots.cols() != codebook.dim() {
        return Err(CoreError::shape(
            "quantize",
            format!("slot dim {} vs prototype dim {}", slots.cols(), codebook.dim()),
        ));
    }
    let mut idx = Vec::with_capacity(slots.rows());
    let mut data = Vec::with_capacity(slots.len());
    for i in 0..slots.rows() {
        let k = codebook.nearest(slots.row(i));
        idx.push(k);
        data.extend_from_slice(codebook.prototype(k));
    }
    Ok((Tensor::from_vec(slots.rows(), slots.cols(), data)?, idx))
}

/// Marks the first slot hitting each distinct prototype; later hits are
/// masked out. Slot vectors themselves are never resized.
pub fn prune_duplicates(idx: &[usize]) -> Result<SlotMask> {
    if idx.is_empty() {
        return Err(CoreError::invalid("prune_duplicates", "no slots"));
    }
    let mut seen = Vec::new();
    let flags = idx
        .iter()
        .map(|&k| {
            if seen.contains(&k) {
                false
            } else {
                seen.push(k);
                true
            }
        })
        .collect();
    SlotMask::new(flags, idx.to_vec())
}

/// Retained slot vectors of one scene together with its mask (detached
/// values, ready for codebook updates).
#[derive(Clone, Debug)]
pub struct SceneSlots<T> {
    pub slots: Tensor<T>,
    pub mask: SlotMask,
}

/// One EMA k-means step over a mini-batch of final slots.
///
/// Retained slots are assigned to prototypes (re-quantized by default, or by
/// their first-stage indices), each assigned prototype moves toward its
/// assignment centroid by the EMA rate, and its usage stamp is refreshed.
/// Prototypes with an empty assignment set are untouched.
pub fn ema_update<T: Real>(
    codebook: &mut PrototypeCodebook<T>,
    batch: &[SceneSlots<T>],
    step: u64,
    mode: EmaAssignment,
) -> Result<()> {
    let kp = codebook.len();
    let dim = codebook.dim();
    let mut sums = vec![T::zero(); kp * dim];
    let mut counts = vec![0usize; kp];
    for scene in batch {
        if scene.slots.cols() != dim {
            return Err(CoreError::shape("ema_update", "slot dim mismatch"));
        }
        if scene.mask.len() != scene.slots.rows() {
            return Err(CoreError::shape("ema_update", "mask length mismatch"));
        }
        for slot in 0..scene.slots.rows() {
            if !scene.mask.retained(slot) {
                continue;
            }
            let row = scene.slots.row(slot);
            let assigned = match mode {
                EmaAssignment::Requantize => codebook.nearest(row),
                EmaAssignment::Stage1Idx => scene.mask.idx()[slot],
            };
            if assigned >= kp {
                return Err(CoreError::invalid(
                    "ema_update",
                    format!("prototype index {assigned} out of {kp}"),
                ));
            }
            for (s, &v) in sums[assigned * dim..(assigned + 1) * dim].iter_mut().zip(row) {
                *s += v;
            }
            counts[assigned] += 1;
        }
    }
    let eta = real::<T>(codebook.ema_rate);
    let keep = T::one() - eta;
    for k in 0..kp {
        if counts[k] == 0 {
            continue;
        }
        let inv = T::one() / T::from_usize(counts[k]).expect("count fits scalar");
        for j in 0..dim {
            let centroid = sums[k * dim + j] * inv;
            let old = codebook.vectors.get(k, j);
            codebook.vectors.set(k, j, keep * old + eta * centroid);
        }
        codebook.last_used_step[k] = step;
    }
    Ok(())
}

/// Replaces every prototype unused for more than the timeout with the batch
/// slot least similar (max-min cosine distance) to all currently active
/// prototypes. A freshly revived prototype is immediately active, so later
/// revivals in the same call see it. Returns how many were revived.
pub fn revive_dead<T: Real>(
    codebook: &mut PrototypeCodebook<T>,
    candidates: &Tensor<T>,
    step: u64,
) -> Result<usize> {
    if candidates.rows() == 0 {
        return Err(CoreError::invalid("revive_dead", "empty candidate batch"));
    }
    if candidates.cols() != codebook.dim() {
        return Err(CoreError::shape("revive_dead", "candidate dim mismatch"));
    }
    let dead: Vec<usize> = (0..codebook.len())
        .filter(|&k| codebook.is_dead(k, step))
        .collect();
    let mut active: Vec<usize> = (0..codebook.len())
        .filter(|&k| !codebook.is_dead(k, step))
        .collect();
    let mut revived = 0;
    for &k in &dead {
        let mut best_row = 0;
        let mut best_score = T::neg_infinity();
        for row in 0..candidates.rows() {
            let slot = candidates.row(row);
            let mut min_dist = T::infinity();
            for &a in &active {
                let d = cosine_distance(slot, codebook.prototype(a));
                if d < min_dist {
                    min_dist = d;
                }
            }
            if min_dist > best_score {
                best_score = min_dist;
                best_row = row;
            }
        }
        let replacement = candidates.row(best_row).to_vec();
        codebook.vectors.row_mut(k).copy_from_slice(&replacement);
        codebook.last_used_step[k] = step;
        active.push(k);
        revived += 1;
    }
    Ok(revived)
}
