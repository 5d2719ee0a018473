//! Training loop: streamed scene batches, per-scene tapes, averaged
//! gradients, Adam updates, and (for the two-stage aggregator) the pooled
//! post-batch codebook update. Everything is a pure function of the
//! configuration and seed.

use metaslot_core::codebook::{SceneSlots, SlotMask};
use metaslot_core::decoder::{decode, reconstruction_loss};
use metaslot_core::metaslot::{
    metaslot_forward, update_codebook, CodebookUpdatePolicy, MetaSlotConfig,
};
use metaslot_core::metrics::{evaluate_split, MetricsAggregate, MetricsReport, SceneEval};
use metaslot_core::rng::{derive_seed, Rng};
use metaslot_core::scene::{generate_scene, generate_split};
use metaslot_core::slots::{init_slots, run_iterations, BoundSlotAttention};
use metaslot_core::tape::Var;
use metaslot_core::{Codebook64, Scene64, Tape64, Tensor64};

use crate::config::{Aggregator, TrainConfig};
use crate::error::{CliError, Result};
use crate::log;
use crate::model::Model;
use crate::optim::{adam_step, AdamHyper, AdamState};

/// Snapshot of one scene's aggregation, collected for step observers.
#[derive(Clone, Debug)]
pub struct SceneTrace {
    pub mask: SlotMask,
    pub attn: Tensor64,
    /// Values entering the final refinement step.
    pub s_pre_final: Tensor64,
    pub s_final: Tensor64,
}

/// Per-step artifacts handed to an observer during training.
pub struct StepTrace<'a> {
    pub step: usize,
    pub mean_loss: f64,
    pub scenes: &'a [SceneTrace],
}

pub struct ForwardArtifacts {
    pub loss: Var<f64>,
    pub pred_labels: Vec<usize>,
    pub mask: SlotMask,
    pub active_count: usize,
    pub scene_slots: Option<SceneSlots<f64>>,
    pub trace: Option<SceneTrace>,
}

fn metaslot_cfg(cfg: &TrainConfig) -> MetaSlotConfig {
    MetaSlotConfig {
        k_max: cfg.k_max,
        iterations: cfg.iterations,
        sigma_noise: cfg.sigma_noise,
        enable_noise: cfg.enable_noise,
        enable_mask: cfg.enable_mask,
        enable_straight_through: cfg.enable_straight_through,
        bypass_codebook: false,
        ema_assignment: cfg.ema_assignment,
        stochastic_stage1: cfg.stochastic_stage1,
    }
}

/// Forward pass for one scene under the configured aggregator. The codebook
/// is read, never written (updates happen per batch); `training` controls
/// annealed noise in the second stage.
#[allow(clippy::too_many_arguments)]
pub fn forward_scene(
    tape: &Tape64,
    sa: &BoundSlotAttention<f64>,
    dec: &metaslot_core::decoder::BoundDecoder<f64>,
    codebook: &mut Codebook64,
    cfg: &TrainConfig,
    scene: &Scene64,
    rng: &mut Rng,
    training: bool,
    want_trace: bool,
) -> Result<ForwardArtifacts> {
    let z = tape.constant(&scene.features)?;
    let (state, mask, collect_slots, trace) = match cfg.aggregator {
        Aggregator::Metaslot => {
            let ms_cfg = metaslot_cfg(cfg);
            let out = metaslot_forward(
                &z,
                sa,
                codebook,
                &ms_cfg,
                rng,
                training,
                CodebookUpdatePolicy::Deferred,
                0,
            )?;
            let trace = want_trace.then(|| SceneTrace {
                mask: out.mask.clone(),
                attn: out.attn.value(),
                s_pre_final: out.s_pre_final.clone(),
                s_final: out.s_final.slots.value(),
            });
            let slots = out.scene_slots();
            (out.s_final, out.mask, Some(slots), trace)
        }
        Aggregator::LearnedQuerySa => {
            // same pipeline with quantization bypassed and masking/noise off:
            // 2T iterations of learned-query attention with the
            // straight-through coupling before the last step
            let mut ms_cfg = metaslot_cfg(cfg);
            ms_cfg.bypass_codebook = true;
            ms_cfg.enable_mask = false;
            ms_cfg.enable_noise = false;
            let out = metaslot_forward(
                &z,
                sa,
                codebook,
                &ms_cfg,
                rng,
                training,
                CodebookUpdatePolicy::Deferred,
                0,
            )?;
            (out.s_final, out.mask, None, None)
        }
        Aggregator::SlotAttention => {
            // sampled queries, full backprop through 2T iterations
            let s0 = init_slots(sa, cfg.k_max, rng, false)?;
            let all = vec![true; cfg.k_max];
            let (state, _attn) =
                run_iterations(&z, &s0, 2 * cfg.iterations, sa, &all, None, false)?;
            let mask = SlotMask::all_retained((0..cfg.k_max).collect());
            (state, mask, None, None)
        }
    };
    let decoded = decode(&state, &mask, dec)?;
    let loss = reconstruction_loss(&decoded, &z)?;
    Ok(ForwardArtifacts {
        loss,
        pred_labels: decoded.pred_labels,
        active_count: mask.active_count(),
        mask,
        scene_slots: collect_slots,
        trace,
    })
}

/// Evaluates a model on a fixed scene split. Deterministic: per-scene noise
/// streams derive from the split root, recording is disabled.
pub fn evaluate_model(
    model: &Model,
    cfg: &TrainConfig,
    scenes: &[Scene64],
    noise_root: u64,
) -> Result<MetricsReport> {
    let mut codebook = model.codebook.clone();
    let mut outputs = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let tape = Tape64::new();
        tape.set_grad_enabled(false);
        let sa = model.sa.bind(&tape, false)?;
        let dec = model.dec.bind(&tape, false)?;
        let mut rng = Rng::seed_from_u64(derive_seed(noise_root, i as u64));
        let art = forward_scene(
            &tape, &sa, &dec, &mut codebook, cfg, scene, &mut rng, false, false,
        )?;
        outputs.push(SceneEval {
            pred_labels: art.pred_labels,
            active_count: art.active_count,
        });
    }
    Ok(evaluate_split(&outputs, scenes)?)
}

/// Everything a finished run hands back.
pub struct TrainOutcome {
    pub model: Model,
    pub adam: AdamState,
    pub steps_done: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub evals: Vec<(usize, MetricsAggregate)>,
    pub final_report: MetricsReport,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(cfg, None)
}

/// Training loop with an optional per-step observer (used by invariant
/// audits that inspect mask algebra during a live run).
pub fn train_observed(
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn FnMut(&StepTrace)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.scene_spec();
    let mut model = Model::init(cfg)?;
    let mut adam = AdamState::new(&model.param_sizes());
    let hyper = AdamHyper {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let eval_scenes = generate_split::<f64>(cfg.eval_scene_root(), &spec, cfg.eval_scenes)?;

    let param_sizes = model.param_sizes();
    let mut initial_loss = None;
    let mut final_loss = None;
    let mut evals = Vec::new();

    for step in 0..cfg.steps {
        let mut grad_acc: Vec<Vec<f64>> = param_sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut batch_slots: Vec<SceneSlots<f64>> = Vec::new();
        let mut traces: Vec<SceneTrace> = Vec::new();
        let mut loss_sum = 0.0;

        for i in 0..cfg.batch_size {
            let global = (step * cfg.batch_size + i) as u64;
            let mut scene_rng =
                Rng::seed_from_u64(derive_seed(cfg.train_scene_root(), global));
            let scene = generate_scene::<f64>(&mut scene_rng, &spec)?;
            let mut fwd_rng = Rng::seed_from_u64(derive_seed(cfg.train_noise_root(), global));

            let tape = Tape64::new();
            let sa = model.sa.bind(&tape, true)?;
            let dec = model.dec.bind(&tape, true)?;
            let art = forward_scene(
                &tape,
                &sa,
                &dec,
                &mut model.codebook,
                cfg,
                &scene,
                &mut fwd_rng,
                true,
                observer.is_some(),
            )?;
            let loss_value = art.loss.item();
            if !loss_value.is_finite() {
                return Err(CliError::TrainingAborted {
                    step,
                    reason: format!("non-finite loss in scene {i}"),
                });
            }
            loss_sum += loss_value;

            let grads = tape.backward(&art.loss)?;
            let named: Vec<_> = sa
                .named_vars()
                .into_iter()
                .chain(dec.named_vars())
                .collect();
            debug_assert_eq!(named.len(), grad_acc.len());
            for (acc, (_, var)) in grad_acc.iter_mut().zip(&named) {
                if let Some(g) = grads.get(var) {
                    for (a, &x) in acc.iter_mut().zip(g) {
                        *a += x;
                    }
                }
            }
            if let Some(slots) = art.scene_slots {
                batch_slots.push(slots);
            }
            if let Some(trace) = art.trace {
                traces.push(trace);
            }
        }

        let mean_loss = loss_sum / cfg.batch_size as f64;
        if step == 0 {
            initial_loss = Some(mean_loss);
        }
        final_loss = Some(mean_loss);

        // averaged gradients -> Adam
        let inv_batch = 1.0 / cfg.batch_size as f64;
        let named = model.named_tensors();
        let grad_tensors: Vec<Tensor64> = grad_acc
            .iter()
            .zip(&named)
            .map(|(acc, (_, t))| {
                Tensor64::from_vec(
                    t.rows(),
                    t.cols(),
                    acc.iter().map(|g| g * inv_batch).collect(),
                )
                .expect("gradient shape matches parameter")
            })
            .collect();
        drop(named);
        let mut param_refs: Vec<&mut Tensor64> = model
            .named_tensors_mut()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        adam_step(&mut param_refs, &grad_tensors, &mut adam, &hyper)?;
        drop(param_refs);

        if cfg.aggregator == Aggregator::Metaslot {
            update_codebook(
                &mut model.codebook,
                &batch_slots,
                step as u64,
                cfg.ema_assignment,
            )?;
        }

        if let Some(obs) = observer.as_mut() {
            obs(&StepTrace {
                step,
                mean_loss,
                scenes: &traces,
            });
        }

        if (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps {
            let report = evaluate_model(&model, cfg, &eval_scenes, cfg.eval_noise_root())?;
            log::info(&format!(
                "step {:>6}  loss {:.6}  fg_ari {:.4}  active {:.2}",
                step + 1,
                mean_loss,
                report.aggregate.fg_ari_mean,
                report.aggregate.active_count_mean
            ));
            evals.push((step + 1, report.aggregate));
        } else {
            log::debug(&format!("step {:>6}  loss {:.6}", step + 1, mean_loss));
        }
    }

    let final_report = evaluate_model(&model, cfg, &eval_scenes, cfg.eval_noise_root())?;
    evals.push((cfg.steps, final_report.aggregate.clone()));
    log::info(&format!(
        "done: {} steps  fg_ari {:.4}  mbo {:.4}  active {:.2}",
        cfg.steps,
        final_report.aggregate.fg_ari_mean,
        final_report.aggregate.mbo_mean,
        final_report.aggregate.active_count_mean
    ));

    Ok(TrainOutcome {
        model,
        adam,
        steps_done: cfg.steps,
        initial_loss,
        final_loss,
        evals,
        final_report,
    })
}
