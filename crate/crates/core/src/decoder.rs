//! Broadcast MLP decoder: every retained slot is broadcast across all
//! positions, offset by a learned positional embedding, and decoded by a
//! shared MLP into a reconstructed feature vector plus an alpha logit. The
//! alpha softmax runs over retained slots only, so masked slots carry exactly
//! zero mixing weight, and the reconstruction is the alpha-weighted mixture.

use crate::codebook::SlotMask;
use crate::rng::Rng;
use crate::slots::SlotState;
use crate::tape::{mlp, mse, Tape, Var};
use crate::tensor::Tensor;
use crate::{real, CoreError, Real, Result};

#[derive(Clone, Debug)]
pub struct DecoderParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub positions: usize,
    /// Learned per-position embedding (`N x D`).
    pub pos_emb: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> DecoderParams<T> {
    /// `grid` optionally seeds the positional table with a (height, width)
    /// coordinate ramp in the last two feature channels, matching the scene
    /// convention, so position is available to the decoder from step zero.
    pub fn init(
        positions: usize,
        dim: usize,
        hidden: usize,
        grid: Option<(usize, usize)>,
        rng: &mut Rng,
    ) -> Self {
        let xavier = |rng: &mut Rng, rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| real::<T>((rng.uniform_f64() * 2.0 - 1.0) * limit))
                    .collect(),
            )
            .expect("xavier shape")
        };
        let mut pos_emb = Tensor::from_vec(
            positions,
            dim,
            (0..positions * dim)
                .map(|_| real::<T>(rng.normal_f64() * 0.1))
                .collect(),
        )
        .expect("positional embedding shape");
        if let Some((height, width)) = grid {
            if height * width == positions && dim >= 3 {
                for row in 0..height {
                    for col in 0..width {
                        let i = row * width + col;
                        pos_emb.set(i, dim - 3, real::<T>(col as f64 / (width - 1).max(1) as f64));
                        pos_emb.set(i, dim - 2, real::<T>(row as f64 / (height - 1).max(1) as f64));
                    }
                }
            }
        }
        DecoderParams {
            dim,
            hidden,
            positions,
            pos_emb,
            w1: xavier(rng, dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: xavier(rng, hidden, dim + 1),
            b2: Tensor::zeros(1, dim + 1),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("dec.pos_emb", &self.pos_emb),
            ("dec.w1", &self.w1),
            ("dec.b1", &self.b1),
            ("dec.w2", &self.w2),
            ("dec.b2", &self.b2),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("dec.pos_emb", &mut self.pos_emb),
            ("dec.w1", &mut self.w1),
            ("dec.b1", &mut self.b1),
            ("dec.w2", &mut self.w2),
            ("dec.b2", &mut self.b2),
        ]
    }

    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Result<BoundDecoder<T>> {
        Ok(BoundDecoder {
            dim: self.dim,
            positions: self.positions,
            pos_emb: tape.leaf(&self.pos_emb, trainable)?,
            w1: tape.leaf(&self.w1, trainable)?,
            b1: tape.leaf(&self.b1, trainable)?,
            w2: tape.leaf(&self.w2, trainable)?,
            b2: tape.leaf(&self.b2, trainable)?,
        })
    }
}

pub struct BoundDecoder<T> {
    pub dim: usize,
    pub positions: usize,
    pub pos_emb: Var<T>,
    pub w1: Var<T>,
    pub b1: Var<T>,
    pub w2: Var<T>,
    pub b2: Var<T>,
}

impl<T: Real> BoundDecoder<T> {
    pub fn named_vars(&self) -> Vec<(&'static str, &Var<T>)> {
        vec![
            ("dec.pos_emb", &self.pos_emb),
            ("dec.w1", &self.w1),
            ("dec.b1", &self.b1),
            ("dec.w2", &self.w2),
            ("dec.b2", &self.b2),
        ]
    }
}

/// Decoder output for one scene.
#[derive(Debug)]
pub struct DecodedScene<T> {
    /// Mixture reconstruction (`N x D`).
    pub reconstruction: Var<T>,
    /// Mixing weights (`N x K`); rows sum to one over retained slots and
    /// masked columns are exactly zero.
    pub alpha: Var<T>,
    /// Argmax slot per position (retained slot identifiers, alpha ties break
    /// to the lowest slot index).
    pub pred_labels: Vec<usize>,
}

/// Decodes the retained slots into per-position reconstructions and a
/// mixture over slots.
pub fn decode<T: Real>(
    s_final: &SlotState<T>,
    mask: &SlotMask,
    p: &BoundDecoder<T>,
) -> Result<DecodedScene<T>> {
    let k_slots = s_final.slots.rows();
    if mask.len() != k_slots {
        return Err(CoreError::shape(
            "decode",
            format!("mask length {} vs {} slots", mask.len(), k_slots),
        ));
    }
    if s_final.slots.cols() != p.dim {
        return Err(CoreError::shape("decode", "slot dim vs decoder dim"));
    }
    let retained = mask.retained_slots();
    if retained.is_empty() {
        return Err(CoreError::invalid("decode", "all slots masked"));
    }
    let n = p.positions;
    let tape = s_final.slots.tape().clone();
    let zero_logit = tape.constant(&Tensor::zeros(n, 1))?;

    let mut recons: Vec<Option<Var<T>>> = vec![None; k_slots];
    let mut logit_cols: Vec<Var<T>> = Vec::with_capacity(k_slots);
    for slot in 0..k_slots {
        if !mask.retained(slot) {
            logit_cols.push(zero_logit.clone());
            continue;
        }
        let row = s_final.slots.gather_rows(&[slot])?;
        let trunk_in = row.broadcast_row(n)?.add(&p.pos_emb)?;
        let out = mlp(&trunk_in, &p.w1, &p.b1, &p.w2, &p.b2)?;
        recons[slot] = Some(out.slice_cols(0, p.dim)?);
        logit_cols.push(out.slice_cols(p.dim, p.dim + 1)?);
    }
    let logit_refs: Vec<&Var<T>> = logit_cols.iter().collect();
    let logits = Var::concat_cols(&logit_refs)?;
    let alpha = logits.masked_softmax(mask.flags())?;

    let mut reconstruction: Option<Var<T>> = None;
    for slot in 0..k_slots {
        if let Some(recon) = &recons[slot] {
            let weighted = recon.mul_colvec(&alpha.slice_cols(slot, slot + 1)?)?;
            reconstruction = Some(match reconstruction {
                Some(acc) => acc.add(&weighted)?,
                None => weighted,
            });
        }
    }
    let reconstruction = reconstruction.expect("at least one retained slot");
    let pred_labels = predicted_masks(&alpha.value(), mask);
    Ok(DecodedScene {
        reconstruction,
        alpha,
        pred_labels,
    })
}

/// Per-position argmax over retained slots' mixing weights; ties break to
/// the lowest slot index.
pub fn predicted_masks<T: Real>(alpha: &Tensor<T>, mask: &SlotMask) -> Vec<usize> {
    let retained = mask.retained_slots();
    let mut labels = Vec::with_capacity(alpha.rows());
    for i in 0..alpha.rows() {
        let mut best = retained[0];
        let mut best_w = alpha.get(i, retained[0]);
        for &slot in &retained[1..] {
            let w = alpha.get(i, slot);
            if w > best_w {
                best_w = w;
                best = slot;
            }
        }
        labels.push(best);
    }
    labels
}

/// Mean squared error against the clean features. Feature noise is an
/// aggregation device, never part of the objective, so the target is always
/// the unperturbed map.
pub fn reconstruction_loss<T: Real>(decoded: &DecodedScene<T>, z_clean: &Var<T>) -> Result<Var<T>> {
    if decoded.reconstruction.rows() != z_clean.rows()
        || decoded.reconstruction.cols() != z_clean.cols()
    {
        return Err(CoreError::shape(
            "reconstruction_loss",
            "reconstruction vs target shape",
        ));
    }
    mse(&decoded.reconstruction, z_clean)
}
