//! Two-stage aggregation with prototype-guided pruning.
//!
//! Stage one runs plain slot attention from detached learnable queries and is
//! cut off from the loss entirely. Its slots are quantized against the global
//! prototype codebook; slots that picked the same prototype are pruned down
//! to the first hit. Stage two refines the surviving prototypes with masked
//! attention under linearly annealed feature noise; a straight-through
//! coupling (`SG(S) + init - SG(init)`) re-attaches the learnable queries so
//! that the single gradient-carrying step — the final, noiseless one — also
//! trains them. After a training batch the codebook moves toward the
//! mini-batch centroids of the final slots and stale prototypes are revived.

use crate::codebook::{
    ema_update, prune_duplicates, quantize, revive_dead, EmaAssignment, PrototypeCodebook,
    SceneSlots, SlotMask,
};
use crate::rng::Rng;
use crate::slots::{attention_step, init_slots, run_iterations, slot_update, BoundSlotAttention, SlotState};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{real, CoreError, Real, Result};

/// Linearly annealed noise amplitude: `alpha(t) = sigma * (1 - t/(T-1))`, so
/// the first refinement step sees the full amplitude and the final one is
/// exactly noiseless. A single-step schedule is identically zero.
#[derive(Clone, Copy, Debug)]
pub struct NoiseSchedule {
    pub sigma: f64,
    pub steps: usize,
}

impl NoiseSchedule {
    pub fn new(sigma: f64, steps: usize) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(CoreError::invalid(
                "noise_schedule",
                format!("sigma must be finite and >= 0, got {sigma}"),
            ));
        }
        if steps == 0 {
            return Err(CoreError::invalid("noise_schedule", "need at least one step"));
        }
        Ok(NoiseSchedule { sigma, steps })
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        if t >= self.steps {
            return Err(CoreError::invalid(
                "noise_schedule",
                format!("iteration {t} outside 0..{}", self.steps),
            ));
        }
        if self.steps == 1 {
            return Ok(0.0);
        }
        Ok(self.sigma * (1.0 - t as f64 / (self.steps - 1) as f64))
    }
}

/// Adds isotropic Gaussian noise of standard deviation `alpha` to the
/// features. The noise enters as a constant, so gradients w.r.t. the clean
/// features are untouched; `alpha = 0` returns the input node itself
/// (bit-identical, and the random stream is not advanced).
pub fn inject_noise<T: Real>(z: &Var<T>, alpha: f64, rng: &mut Rng) -> Result<Var<T>> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(CoreError::invalid(
            "inject_noise",
            format!("alpha must be finite and >= 0, got {alpha}"),
        ));
    }
    if alpha == 0.0 {
        return Ok(z.clone());
    }
    let noise = Tensor::from_vec(
        z.rows(),
        z.cols(),
        (0..z.len())
            .map(|_| real::<T>(rng.normal_f64() * alpha))
            .collect(),
    )?;
    z.add(&z.tape().constant(&noise)?)
}

/// Ablation and sizing switches of the two-stage aggregator.
#[derive(Clone, Copy, Debug)]
pub struct MetaSlotConfig {
    pub k_max: usize,
    /// Iterations per stage.
    pub iterations: usize,
    pub sigma_noise: f64,
    pub enable_noise: bool,
    pub enable_mask: bool,
    pub enable_straight_through: bool,
    /// Skip quantization entirely: stage two starts from the stage-one slots
    /// and every slot is retained. This is the fixed-slot learned-query
    /// baseline expressed in the same pipeline.
    pub bypass_codebook: bool,
    pub ema_assignment: EmaAssignment,
    /// Sample stage-one initial slots instead of using the query means.
    pub stochastic_stage1: bool,
}

impl MetaSlotConfig {
    pub fn new(k_max: usize, iterations: usize, sigma_noise: f64) -> Self {
        MetaSlotConfig {
            k_max,
            iterations,
            sigma_noise,
            enable_noise: true,
            enable_mask: true,
            enable_straight_through: true,
            bypass_codebook: false,
            ema_assignment: EmaAssignment::Requantize,
            stochastic_stage1: false,
        }
    }
}

/// When the forward pass itself maintains the codebook.
///
/// Training batches normally defer: the loop pools every scene's retained
/// slots and calls [`update_codebook`] once per batch, which is what the
/// mini-batch centroid update wants. `PerScene` performs the update inside
/// the forward (a mini-batch of one).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodebookUpdatePolicy {
    PerScene,
    Deferred,
}

/// Everything a forward pass produces.
#[derive(Debug)]
pub struct MetaSlotOutput<T> {
    pub s_final: SlotState<T>,
    pub mask: SlotMask,
    /// Final masked attention (`N x K`); masked columns are exactly zero.
    pub attn: Var<T>,
    pub active_count: usize,
    /// The deterministic learnable-query node the straight-through step
    /// couples to (kept for gradient audits).
    pub init: SlotState<T>,
    /// Detached stage-one slots (values).
    pub s_mid: Tensor<T>,
    /// The constant node stage two starts from (the quantized slots); kept
    /// so audits can assert it never receives gradient.
    pub stage2_start: Var<T>,
    /// Stage-two prefix output values, before the straight-through coupling.
    pub s_stage2_prefix: Tensor<T>,
    /// Values entering the final refinement step, after the straight-through
    /// coupling.
    pub s_pre_final: Tensor<T>,
}

impl<T: Real> MetaSlotOutput<T> {
    pub fn idx(&self) -> &[usize] {
        self.mask.idx()
    }

    /// Detached retained final slots paired with the mask, ready for
    /// codebook updates.
    pub fn scene_slots(&self) -> SceneSlots<T> {
        SceneSlots {
            slots: self.s_final.slots.value(),
            mask: self.mask.clone(),
        }
    }
}

/// Full two-stage forward pass over one scene.
///
/// `training` selects the training-time behavior: annealed noise in the
/// second stage and (under [`CodebookUpdatePolicy::PerScene`]) the codebook
/// update from this scene's detached final slots. Evaluation refines on
/// clean features and never mutates the codebook.
#[allow(clippy::too_many_arguments)]
pub fn metaslot_forward<T: Real>(
    z: &Var<T>,
    params: &BoundSlotAttention<T>,
    codebook: &mut PrototypeCodebook<T>,
    cfg: &MetaSlotConfig,
    rng: &mut Rng,
    training: bool,
    update_policy: CodebookUpdatePolicy,
    step: u64,
) -> Result<MetaSlotOutput<T>> {
    if !cfg.bypass_codebook && cfg.k_max > codebook.len() {
        return Err(CoreError::invalid(
            "metaslot_forward",
            format!(
                "k_max {} exceeds prototype count {}; every slot needs a distinct prototype",
                cfg.k_max,
                codebook.len()
            ),
        ));
    }
    let t_iters = cfg.iterations;
    if t_iters == 0 {
        return Err(CoreError::invalid("metaslot_forward", "iterations must be >= 1"));
    }

    // Stage one: plain slot attention from detached queries on clean features.
    let init = init_slots(params, cfg.k_max, rng, !cfg.stochastic_stage1)?;
    let stage1_start = SlotState {
        slots: init.slots.stop_gradient()?,
        iteration: 0,
    };
    let all_retained = vec![true; cfg.k_max];
    let (stage1_out, _) = run_iterations(z, &stage1_start, t_iters, params, &all_retained, None, false)?;
    let s_mid = stage1_out.slots.value();

    // Quantize against the prototypes and prune duplicate hits.
    let (s_hat, idx) = if cfg.bypass_codebook {
        (s_mid.clone(), (0..cfg.k_max).collect())
    } else {
        quantize(&s_mid, codebook)?
    };
    let mask = if cfg.enable_mask {
        prune_duplicates(&idx)?
    } else {
        SlotMask::all_retained(idx)
    };

    // Stage two: masked refinement under annealed noise. The prefix steps
    // stay behind the straight-through cut; only the final step, which the
    // schedule pins at zero noise, carries gradient. Noise is an annealing
    // device for training; evaluation refines on clean features.
    let tape = z.tape().clone();
    let schedule = NoiseSchedule::new(
        if cfg.enable_noise && training {
            cfg.sigma_noise
        } else {
            0.0
        },
        t_iters,
    )?;
    let stage2_start = tape.constant(&s_hat)?;
    let mut stage2 = SlotState {
        slots: stage2_start.clone(),
        iteration: 0,
    };
    if t_iters >= 2 {
        let (prefix_out, _) = run_iterations(
            z,
            &stage2,
            t_iters - 1,
            params,
            mask.flags(),
            Some((&schedule, rng)),
            false,
        )?;
        stage2 = prefix_out;
    }
    let s_pre = stage2.slots.clone();
    let s_stage2_prefix = s_pre.value();
    let (s_final, attn, s_pre_final) = refine_tail(
        &s_pre,
        &init,
        z,
        params,
        &mask,
        cfg.enable_straight_through,
        stage2.iteration,
    )?;

    let active_count = mask.active_count();
    let output = MetaSlotOutput {
        s_final,
        mask,
        attn,
        active_count,
        init,
        s_mid,
        stage2_start,
        s_stage2_prefix,
        s_pre_final,
    };

    if training && update_policy == CodebookUpdatePolicy::PerScene {
        update_codebook(codebook, &[output.scene_slots()], step, cfg.ema_assignment)?;
    }
    Ok(output)
}

/// The gradient-carrying tail: straight-through coupling followed by the
/// final masked refinement step on the clean features. Returns the final
/// state, the final attention, and the values that entered the step.
///
/// Exposed separately so gradient audits can rebuild the differentiable part
/// of the pipeline from frozen prefix values and compare bit-for-bit.
pub fn refine_tail<T: Real>(
    s_entry: &Var<T>,
    init: &SlotState<T>,
    z: &Var<T>,
    params: &BoundSlotAttention<T>,
    mask: &SlotMask,
    straight_through: bool,
    iteration: usize,
) -> Result<(SlotState<T>, Var<T>, Tensor<T>)> {
    let coupled = if straight_through {
        s_entry
            .stop_gradient()?
            .add(&init.slots)?
            .sub(&init.slots.stop_gradient()?)?
    } else {
        s_entry.clone()
    };
    let entered = coupled.value();
    let state = SlotState {
        slots: coupled,
        iteration,
    };
    let (s_tilde, attn) = attention_step(&state, z, params, mask.flags())?;
    let s_final = slot_update(&state, &s_tilde, params, mask.flags())?;
    Ok((s_final, attn, entered))
}

/// Post-batch codebook maintenance: one EMA k-means step over the pooled
/// retained slots, then revival of timed-out prototypes from the same pool.
/// Returns the number of revived prototypes.
pub fn update_codebook<T: Real>(
    codebook: &mut PrototypeCodebook<T>,
    batch: &[SceneSlots<T>],
    step: u64,
    mode: EmaAssignment,
) -> Result<usize> {
    ema_update(codebook, batch, step, mode)?;
    let mut pooled = Vec::new();
    let mut count = 0;
    for scene in batch {
        for slot in scene.mask.retained_slots() {
            pooled.extend_from_slice(scene.slots.row(slot));
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0);
    }
    let candidates = Tensor::from_vec(count, codebook.dim(), pooled)?;
    revive_dead(codebook, &candidates, step)
}
