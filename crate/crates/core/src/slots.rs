//! Shared-weight slot attention: learnable initial queries, one (optionally
//! masked) attention step, and the GRU+MLP slot update.
//!
//! Both aggregation stages of the two-stage pipeline run through these
//! functions with the same parameter set. Masking is expressed on the slot
//! axis: masked slots receive exactly zero attention, a zero increment, and
//! their state rows pass through updates unchanged. Slot count never changes
//! at runtime — pruning is always a mask, never a resize.

use crate::metaslot::NoiseSchedule;
use crate::rng::Rng;
use crate::tape::{linear, mlp, Tape, Var};
use crate::tensor::Tensor;
use crate::{real, CoreError, Real, Result};

/// How initial slot queries are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Independent learnable (mean, log-scale) pair per slot.
    LearnedQueries,
    /// Single learnable Gaussian shared by all slots.
    SharedGaussian,
}

/// Affine layer-norm parameters.
#[derive(Clone, Debug)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> LayerNormParams<T> {
    fn identity(dim: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::full(1, dim, T::one()),
            beta: Tensor::zeros(1, dim),
        }
    }
}

/// GRU cell parameters, one gate set shared across slot rows.
///
/// Gates follow the conventional formulation: reset `r`, update `z`,
/// candidate `n = tanh(x W_in + (r * h) W_hn + b_n)`, and
/// `h' = (1 - z) * h + z * n`, so a saturated update gate replaces the state
/// with the candidate and a closed one keeps the previous state.
#[derive(Clone, Debug)]
pub struct GruParams<T> {
    pub w_ir: Tensor<T>,
    pub w_hr: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_iz: Tensor<T>,
    pub w_hz: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_in: Tensor<T>,
    pub w_hn: Tensor<T>,
    pub b_n: Tensor<T>,
}

/// Full parameter set of the aggregator.
#[derive(Clone, Debug)]
pub struct SlotAttentionParams<T> {
    pub dim: usize,
    pub k_max: usize,
    pub hidden: usize,
    pub init_mode: InitMode,
    /// Residual update `gru + mlp(ln(gru))` (the canonical form) when true;
    /// plain `mlp(gru)` when false.
    pub residual_mlp: bool,

    pub ln_input: LayerNormParams<T>,
    pub ln_slots: LayerNormParams<T>,
    pub ln_pre_mlp: LayerNormParams<T>,
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub gru: GruParams<T>,
    pub mlp_w1: Tensor<T>,
    pub mlp_b1: Tensor<T>,
    pub mlp_w2: Tensor<T>,
    pub mlp_b2: Tensor<T>,
    /// Per-slot learnable query means and log-scales (`k_max x dim`).
    pub queries_mu: Tensor<T>,
    pub queries_log_sigma: Tensor<T>,
    /// Shared Gaussian alternative (`1 x dim` each).
    pub shared_mu: Tensor<T>,
    pub shared_log_sigma: Tensor<T>,
}

fn xavier<T: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| real::<T>((rng.uniform_f64() * 2.0 - 1.0) * limit))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("xavier shape")
}

impl<T: Real> SlotAttentionParams<T> {
    pub fn init(
        dim: usize,
        k_max: usize,
        hidden: usize,
        init_mode: InitMode,
        residual_mlp: bool,
        rng: &mut Rng,
    ) -> Self {
        SlotAttentionParams {
            dim,
            k_max,
            hidden,
            init_mode,
            residual_mlp,
            ln_input: LayerNormParams::identity(dim),
            ln_slots: LayerNormParams::identity(dim),
            ln_pre_mlp: LayerNormParams::identity(dim),
            w_q: xavier(rng, dim, dim),
            b_q: Tensor::zeros(1, dim),
            w_k: xavier(rng, dim, dim),
            b_k: Tensor::zeros(1, dim),
            w_v: xavier(rng, dim, dim),
            b_v: Tensor::zeros(1, dim),
            gru: GruParams {
                w_ir: xavier(rng, dim, dim),
                w_hr: xavier(rng, dim, dim),
                b_r: Tensor::zeros(1, dim),
                w_iz: xavier(rng, dim, dim),
                w_hz: xavier(rng, dim, dim),
                b_z: Tensor::zeros(1, dim),
                w_in: xavier(rng, dim, dim),
                w_hn: xavier(rng, dim, dim),
                b_n: Tensor::zeros(1, dim),
            },
            mlp_w1: xavier(rng, dim, hidden),
            mlp_b1: Tensor::zeros(1, hidden),
            mlp_w2: xavier(rng, hidden, dim),
            mlp_b2: Tensor::zeros(1, dim),
            queries_mu: xavier(rng, k_max, dim),
            queries_log_sigma: Tensor::zeros(k_max, dim),
            shared_mu: xavier(rng, 1, dim),
            shared_log_sigma: Tensor::zeros(1, dim),
        }
    }

    /// Stable (name, tensor) listing used by the optimizer and checkpoints.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("sa.ln_input.gamma", &self.ln_input.gamma),
            ("sa.ln_input.beta", &self.ln_input.beta),
            ("sa.ln_slots.gamma", &self.ln_slots.gamma),
            ("sa.ln_slots.beta", &self.ln_slots.beta),
            ("sa.ln_pre_mlp.gamma", &self.ln_pre_mlp.gamma),
            ("sa.ln_pre_mlp.beta", &self.ln_pre_mlp.beta),
            ("sa.w_q", &self.w_q),
            ("sa.b_q", &self.b_q),
            ("sa.w_k", &self.w_k),
            ("sa.b_k", &self.b_k),
            ("sa.w_v", &self.w_v),
            ("sa.b_v", &self.b_v),
            ("sa.gru.w_ir", &self.gru.w_ir),
            ("sa.gru.w_hr", &self.gru.w_hr),
            ("sa.gru.b_r", &self.gru.b_r),
            ("sa.gru.w_iz", &self.gru.w_iz),
            ("sa.gru.w_hz", &self.gru.w_hz),
            ("sa.gru.b_z", &self.gru.b_z),
            ("sa.gru.w_in", &self.gru.w_in),
            ("sa.gru.w_hn", &self.gru.w_hn),
            ("sa.gru.b_n", &self.gru.b_n),
            ("sa.mlp_w1", &self.mlp_w1),
            ("sa.mlp_b1", &self.mlp_b1),
            ("sa.mlp_w2", &self.mlp_w2),
            ("sa.mlp_b2", &self.mlp_b2),
            ("sa.queries_mu", &self.queries_mu),
            ("sa.queries_log_sigma", &self.queries_log_sigma),
            ("sa.shared_mu", &self.shared_mu),
            ("sa.shared_log_sigma", &self.shared_log_sigma),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("sa.ln_input.gamma", &mut self.ln_input.gamma),
            ("sa.ln_input.beta", &mut self.ln_input.beta),
            ("sa.ln_slots.gamma", &mut self.ln_slots.gamma),
            ("sa.ln_slots.beta", &mut self.ln_slots.beta),
            ("sa.ln_pre_mlp.gamma", &mut self.ln_pre_mlp.gamma),
            ("sa.ln_pre_mlp.beta", &mut self.ln_pre_mlp.beta),
            ("sa.w_q", &mut self.w_q),
            ("sa.b_q", &mut self.b_q),
            ("sa.w_k", &mut self.w_k),
            ("sa.b_k", &mut self.b_k),
            ("sa.w_v", &mut self.w_v),
            ("sa.b_v", &mut self.b_v),
            ("sa.gru.w_ir", &mut self.gru.w_ir),
            ("sa.gru.w_hr", &mut self.gru.w_hr),
            ("sa.gru.b_r", &mut self.gru.b_r),
            ("sa.gru.w_iz", &mut self.gru.w_iz),
            ("sa.gru.w_hz", &mut self.gru.w_hz),
            ("sa.gru.b_z", &mut self.gru.b_z),
            ("sa.gru.w_in", &mut self.gru.w_in),
            ("sa.gru.w_hn", &mut self.gru.w_hn),
            ("sa.gru.b_n", &mut self.gru.b_n),
            ("sa.mlp_w1", &mut self.mlp_w1),
            ("sa.mlp_b1", &mut self.mlp_b1),
            ("sa.mlp_w2", &mut self.mlp_w2),
            ("sa.mlp_b2", &mut self.mlp_b2),
            ("sa.queries_mu", &mut self.queries_mu),
            ("sa.queries_log_sigma", &mut self.queries_log_sigma),
            ("sa.shared_mu", &mut self.shared_mu),
            ("sa.shared_log_sigma", &mut self.shared_log_sigma),
        ]
    }

    /// Enters every parameter tensor on a tape.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Result<BoundSlotAttention<T>> {
        let leaf = |t: &Tensor<T>| tape.leaf(t, trainable);
        Ok(BoundSlotAttention {
            dim: self.dim,
            k_max: self.k_max,
            init_mode: self.init_mode,
            residual_mlp: self.residual_mlp,
            ln_input: (leaf(&self.ln_input.gamma)?, leaf(&self.ln_input.beta)?),
            ln_slots: (leaf(&self.ln_slots.gamma)?, leaf(&self.ln_slots.beta)?),
            ln_pre_mlp: (leaf(&self.ln_pre_mlp.gamma)?, leaf(&self.ln_pre_mlp.beta)?),
            w_q: leaf(&self.w_q)?,
            b_q: leaf(&self.b_q)?,
            w_k: leaf(&self.w_k)?,
            b_k: leaf(&self.b_k)?,
            w_v: leaf(&self.w_v)?,
            b_v: leaf(&self.b_v)?,
            gru: BoundGru {
                w_ir: leaf(&self.gru.w_ir)?,
                w_hr: leaf(&self.gru.w_hr)?,
                b_r: leaf(&self.gru.b_r)?,
                w_iz: leaf(&self.gru.w_iz)?,
                w_hz: leaf(&self.gru.w_hz)?,
                b_z: leaf(&self.gru.b_z)?,
                w_in: leaf(&self.gru.w_in)?,
                w_hn: leaf(&self.gru.w_hn)?,
                b_n: leaf(&self.gru.b_n)?,
            },
            mlp_w1: leaf(&self.mlp_w1)?,
            mlp_b1: leaf(&self.mlp_b1)?,
            mlp_w2: leaf(&self.mlp_w2)?,
            mlp_b2: leaf(&self.mlp_b2)?,
            queries_mu: leaf(&self.queries_mu)?,
            queries_log_sigma: leaf(&self.queries_log_sigma)?,
            shared_mu: leaf(&self.shared_mu)?,
            shared_log_sigma: leaf(&self.shared_log_sigma)?,
        })
    }
}

/// GRU parameters bound to a tape.
pub struct BoundGru<T> {
    pub w_ir: Var<T>,
    pub w_hr: Var<T>,
    pub b_r: Var<T>,
    pub w_iz: Var<T>,
    pub w_hz: Var<T>,
    pub b_z: Var<T>,
    pub w_in: Var<T>,
    pub w_hn: Var<T>,
    pub b_n: Var<T>,
}

/// Aggregator parameters bound to a tape for one forward pass.
pub struct BoundSlotAttention<T> {
    pub dim: usize,
    pub k_max: usize,
    pub init_mode: InitMode,
    pub residual_mlp: bool,
    pub ln_input: (Var<T>, Var<T>),
    pub ln_slots: (Var<T>, Var<T>),
    pub ln_pre_mlp: (Var<T>, Var<T>),
    pub w_q: Var<T>,
    pub b_q: Var<T>,
    pub w_k: Var<T>,
    pub b_k: Var<T>,
    pub w_v: Var<T>,
    pub b_v: Var<T>,
    pub gru: BoundGru<T>,
    pub mlp_w1: Var<T>,
    pub mlp_b1: Var<T>,
    pub mlp_w2: Var<T>,
    pub mlp_b2: Var<T>,
    pub queries_mu: Var<T>,
    pub queries_log_sigma: Var<T>,
    pub shared_mu: Var<T>,
    pub shared_log_sigma: Var<T>,
}

impl<T: Real> BoundSlotAttention<T> {
    /// Ordered gradient targets matching `SlotAttentionParams::named_tensors`.
    pub fn named_vars(&self) -> Vec<(&'static str, &Var<T>)> {
        vec![
            ("sa.ln_input.gamma", &self.ln_input.0),
            ("sa.ln_input.beta", &self.ln_input.1),
            ("sa.ln_slots.gamma", &self.ln_slots.0),
            ("sa.ln_slots.beta", &self.ln_slots.1),
            ("sa.ln_pre_mlp.gamma", &self.ln_pre_mlp.0),
            ("sa.ln_pre_mlp.beta", &self.ln_pre_mlp.1),
            ("sa.w_q", &self.w_q),
            ("sa.b_q", &self.b_q),
            ("sa.w_k", &self.w_k),
            ("sa.b_k", &self.b_k),
            ("sa.w_v", &self.w_v),
            ("sa.b_v", &self.b_v),
            ("sa.gru.w_ir", &self.gru.w_ir),
            ("sa.gru.w_hr", &self.gru.w_hr),
            ("sa.gru.b_r", &self.gru.b_r),
            ("sa.gru.w_iz", &self.gru.w_iz),
            ("sa.gru.w_hz", &self.gru.w_hz),
            ("sa.gru.b_z", &self.gru.b_z),
            ("sa.gru.w_in", &self.gru.w_in),
            ("sa.gru.w_hn", &self.gru.w_hn),
            ("sa.gru.b_n", &self.gru.b_n),
            ("sa.mlp_w1", &self.mlp_w1),
            ("sa.mlp_b1", &self.mlp_b1),
            ("sa.mlp_w2", &self.mlp_w2),
            ("sa.mlp_b2", &self.mlp_b2),
            ("sa.queries_mu", &self.queries_mu),
            ("sa.queries_log_sigma", &self.queries_log_sigma),
            ("sa.shared_mu", &self.shared_mu),
            ("sa.shared_log_sigma", &self.shared_log_sigma),
        ]
    }
}

/// A `K x D` slot matrix at some iteration of the aggregation.
#[derive(Clone, Debug)]
pub struct SlotState<T> {
    pub slots: Var<T>,
    pub iteration: usize,
}

/// Standard GRU cell applied row-wise, one row per slot.
pub fn gru_cell<T: Real>(prev: &Var<T>, input: &Var<T>, p: &BoundGru<T>) -> Result<Var<T>> {
    if prev.rows() != input.rows() || prev.cols() != input.cols() {
        return Err(CoreError::shape(
            "gru_cell",
            format!(
                "prev {}x{} vs input {}x{}",
                prev.rows(),
                prev.cols(),
                input.rows(),
                input.cols()
            ),
        ));
    }
    let r = input
        .matmul(&p.w_ir)?
        .add(&prev.matmul(&p.w_hr)?)?
        .add_rowvec(&p.b_r)?
        .sigmoid()?;
    let z = input
        .matmul(&p.w_iz)?
        .add(&prev.matmul(&p.w_hz)?)?
        .add_rowvec(&p.b_z)?
        .sigmoid()?;
    let candidate = input
        .matmul(&p.w_in)?
        .add(&r.mul(prev)?.matmul(&p.w_hn)?)?
        .add_rowvec(&p.b_n)?
        .tanh_act()?;
    // h' = (1 - z) * prev + z * candidate
    let keep = z.neg()?.add_scalar(T::one())?;
    keep.mul(prev)?.add(&z.mul(&candidate)?)
}

/// Draws (or deterministically takes) initial slots from the learnable
/// queries. With `deterministic` the result is exactly the mean rows — the
/// `init` value consumed by the straight-through coupling.
pub fn init_slots<T: Real>(
    p: &BoundSlotAttention<T>,
    k: usize,
    rng: &mut Rng,
    deterministic: bool,
) -> Result<SlotState<T>> {
    if k == 0 || k > p.k_max {
        return Err(CoreError::invalid(
            "init_slots",
            format!("slot count {k} outside 1..={}", p.k_max),
        ));
    }
    let rows: Vec<usize> = (0..k).collect();
    let (mu, log_sigma) = match p.init_mode {
        InitMode::LearnedQueries => (
            p.queries_mu.gather_rows(&rows)?,
            p.queries_log_sigma.gather_rows(&rows)?,
        ),
        InitMode::SharedGaussian => (
            p.shared_mu.broadcast_row(k)?,
            p.shared_log_sigma.broadcast_row(k)?,
        ),
    };
    let slots = if deterministic {
        mu
    } else {
        let noise = Tensor::from_vec(
            k,
            p.dim,
            (0..k * p.dim).map(|_| rng.normal::<T>()).collect(),
        )?;
        let eps = mu.tape().constant(&noise)?;
        mu.add(&log_sigma.exp()?.mul(&eps)?)?
    };
    Ok(SlotState {
        slots,
        iteration: 0,
    })
}

/// One attention step: masked softmax over the slot axis, per-slot
/// normalization over features, and the attention-weighted mean of the value
/// projections. Returns the slot increments and the (masked) attention map.
pub fn attention_step<T: Real>(
    state: &SlotState<T>,
    z: &Var<T>,
    p: &BoundSlotAttention<T>,
    smask: &[bool],
) -> Result<(Var<T>, Var<T>)> {
    let k_slots = state.slots.rows();
    if smask.len() != k_slots {
        return Err(CoreError::shape(
            "attention_step",
            format!("mask length {} vs {} slots", smask.len(), k_slots),
        ));
    }
    if z.cols() != p.dim || state.slots.cols() != p.dim {
        return Err(CoreError::shape(
            "attention_step",
            format!("feature dim {} vs model dim {}", z.cols(), p.dim),
        ));
    }
    if !smask.iter().any(|&m| m) {
        return Err(CoreError::invalid("attention_step", "all slots masked"));
    }
    let z_n = z.layer_norm(&p.ln_input.0, &p.ln_input.1)?;
    let s_n = state.slots.layer_norm(&p.ln_slots.0, &p.ln_slots.1)?;
    let q = linear(&s_n, &p.w_q, &p.b_q)?;
    let k = linear(&z_n, &p.w_k, &p.b_k)?;
    let v = linear(&z_n, &p.w_v, &p.b_v)?;
    let scale = T::one() / real::<T>((p.dim as f64).sqrt());
    let logits = k.matmul(&q.transpose()?)?.scale(scale)?;
    let attn = logits.masked_softmax(smask)?;
    // Per-slot normalization over features; the epsilon keeps a retained
    // slot that wins no features at a zero increment instead of 0/0.
    let totals = attn.col_sums()?.add_scalar(real::<T>(1e-8))?;
    let weights = attn.mul_rowvec(&totals.recip()?)?;
    let s_tilde = weights.transpose()?.matmul(&v)?;
    Ok((s_tilde, attn))
}

/// GRU + MLP slot update; masked rows are carried through unchanged.
pub fn slot_update<T: Real>(
    state: &SlotState<T>,
    s_tilde: &Var<T>,
    p: &BoundSlotAttention<T>,
    smask: &[bool],
) -> Result<SlotState<T>> {
    let updated = gru_cell(&state.slots, s_tilde, &p.gru)?;
    let updated = if p.residual_mlp {
        let normed = updated.layer_norm(&p.ln_pre_mlp.0, &p.ln_pre_mlp.1)?;
        updated.add(&mlp(&normed, &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2)?)?
    } else {
        mlp(&updated, &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2)?
    };
    let slots = Var::select_rows(smask, &updated, &state.slots)?;
    Ok(SlotState {
        slots,
        iteration: state.iteration + 1,
    })
}

/// Runs `t_total` attention+update iterations. Optional per-iteration noise
/// perturbs the features before each step; `detach_until_last` wraps the
/// slot state entering every iteration after the first in a stop-gradient so
/// only the final step carries gradient.
pub fn run_iterations<T: Real>(
    z: &Var<T>,
    s0: &SlotState<T>,
    t_total: usize,
    p: &BoundSlotAttention<T>,
    smask: &[bool],
    noise: Option<(&NoiseSchedule, &mut Rng)>,
    detach_until_last: bool,
) -> Result<(SlotState<T>, Var<T>)> {
    if t_total == 0 {
        return Err(CoreError::invalid(
            "run_iterations",
            "need at least 1 iteration",
        ));
    }
    let mut state = s0.clone();
    let mut last_attn = None;
    let mut noise = noise;
    for t in 0..t_total {
        if detach_until_last && t >= 1 {
            state = SlotState {
                slots: state.slots.stop_gradient()?,
                iteration: state.iteration,
            };
        }
        let z_t = match noise.as_mut() {
            Some((schedule, rng)) => crate::metaslot::inject_noise(z, schedule.alpha(t)?, rng)?,
            None => z.clone(),
        };
        let (s_tilde, attn) = attention_step(&state, &z_t, p, smask)?;
        state = slot_update(&state, &s_tilde, p, smask)?;
        last_attn = Some(attn);
    }
    Ok((state, last_attn.expect("t_total >= 1")))
}
