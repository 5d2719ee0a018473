//! High-level entry points shared by the command-line interface and the
//! acceptance suite: train-and-save, evaluate-from-checkpoint, mask export,
//! and the gradient-check table.

use std::path::{Path, PathBuf};

use metaslot_core::metrics::MetricsReport;
use metaslot_core::rng::{derive_seed, Rng};
use metaslot_core::scene::generate_split;
use metaslot_core::Tape64;

use crate::checkpoint::Checkpoint;
use crate::checks::{coverage_gaps, run_all, standard_checks};
use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use crate::export::{features_text, sidecar_text, write_pgm};
use crate::log;
use crate::model::Model;
use crate::train::{evaluate_model, forward_scene, train};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Trains a configuration and writes `checkpoint.bin`, `report.txt` and the
/// canonical `config.txt` under `out_dir`.
pub fn run_train(cfg: &TrainConfig, out_dir: &Path) -> Result<(PathBuf, MetricsReport)> {
    let outcome = train(cfg)?;
    let ckpt = Checkpoint::from_parts(cfg, &outcome.model, &outcome.adam, outcome.steps_done as u64);
    let ckpt_path = out_dir.join("checkpoint.bin");
    ckpt.save(&ckpt_path)?;
    write_text(&out_dir.join("report.txt"), &outcome.final_report.render())?;
    write_text(&out_dir.join("config.txt"), &cfg.canonical())?;
    log::info(&format!("wrote {}", ckpt_path.display()));
    Ok((ckpt_path, outcome.final_report))
}

/// Evaluates a checkpoint on a deterministic split. Scene parameters come
/// from `scenes_cfg` when given (otherwise the checkpoint's own config);
/// `n` overrides the split size.
pub fn run_eval(
    ckpt_path: &Path,
    scenes_cfg: Option<&TrainConfig>,
    n: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (embedded_cfg, model, _adam) = ckpt.restore()?;
    let mut eval_cfg = scenes_cfg.cloned().unwrap_or_else(|| embedded_cfg.clone());
    // the model architecture always comes from the checkpoint
    eval_cfg.aggregator = embedded_cfg.aggregator;
    eval_cfg.slot_dim = embedded_cfg.slot_dim;
    eval_cfg.k_max = embedded_cfg.k_max;
    eval_cfg.iterations = embedded_cfg.iterations;
    if eval_cfg.scene_height != embedded_cfg.scene_height
        || eval_cfg.scene_width != embedded_cfg.scene_width
    {
        return Err(CliError::config(
            "scene size must match the checkpoint (the decoder's positional table is learned per position)",
        ));
    }
    if let Some(n) = n {
        eval_cfg.eval_scenes = n;
    }
    eval_cfg.validate()?;
    let scenes = generate_split::<f64>(
        eval_cfg.eval_scene_root(),
        &eval_cfg.scene_spec(),
        eval_cfg.eval_scenes,
    )?;
    let report = evaluate_model(&model, &eval_cfg, &scenes, eval_cfg.eval_noise_root())?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("report.txt"), &report.render())?;
    }
    Ok(report)
}

/// Runs the full gradient-check table; returns the rendered table and
/// whether everything passed (including registry coverage).
pub fn run_gradcheck() -> (String, bool) {
    let checks = standard_checks();
    let gaps = coverage_gaps(&checks);
    let outcomes = run_all(&checks);
    let mut table = String::new();
    let mut all_pass = gaps.is_empty();
    table.push_str("check                          max_rel_err   tolerance  status\n");
    for o in &outcomes {
        all_pass &= o.pass;
        table.push_str(&format!(
            "{:<30} {:>11.3e} {:>11.0e}  {}\n",
            o.name,
            o.max_rel_err,
            o.tolerance,
            if o.pass { "pass" } else { "FAIL" }
        ));
    }
    if !gaps.is_empty() {
        table.push_str(&format!("uncovered ops: {}\n", gaps.join(", ")));
    }
    table.push_str(&format!(
        "{} checks, {} ops covered, {}\n",
        outcomes.len(),
        metaslot_core::tape::DIFFERENTIABLE_OPS.len(),
        if all_pass { "all pass" } else { "FAILURES" }
    ));
    (table, all_pass)
}

/// Exports ground-truth and predicted label maps plus sidecars for the first
/// `n` evaluation scenes of a checkpoint. Returns the file count.
pub fn run_export_masks(
    ckpt_path: &Path,
    out_dir: &Path,
    n: usize,
    dump_features: bool,
) -> Result<usize> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let (cfg, model, _adam) = ckpt.restore()?;
    let scenes = generate_split::<f64>(cfg.eval_scene_root(), &cfg.scene_spec(), n)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(out_dir.display().to_string(), e))?;
    let mut files = 0;
    for (i, scene) in scenes.iter().enumerate() {
        let details = scene_details(&model, &cfg, scene, i)?;
        let gt_path = out_dir.join(format!("scene_{i:03}_gt.pgm"));
        write_pgm(&gt_path, &scene.gt_labels, scene.width, scene.height)?;
        files += 1;
        let pred_path = out_dir.join(format!("scene_{i:03}_pred.pgm"));
        write_pgm(&pred_path, &details.pred_labels, scene.width, scene.height)?;
        files += 1;
        let sidecar = sidecar_text(
            i,
            scene,
            &details.pred_labels,
            &details.smask,
            &details.idx,
            details.active_count,
        );
        write_text(&out_dir.join(format!("scene_{i:03}.txt")), &sidecar)?;
        files += 1;
        if dump_features {
            write_text(
                &out_dir.join(format!("scene_{i:03}_features.txt")),
                &features_text(scene),
            )?;
            files += 1;
        }
    }
    Ok(files)
}

pub struct SceneDetails {
    pub pred_labels: Vec<usize>,
    pub smask: Vec<bool>,
    pub idx: Vec<usize>,
    pub active_count: usize,
}

/// Deterministic single-scene prediction with mask details, matching the
/// evaluation stream for scene `index`.
pub fn scene_details(
    model: &Model,
    cfg: &TrainConfig,
    scene: &metaslot_core::Scene64,
    index: usize,
) -> Result<SceneDetails> {
    let tape = Tape64::new();
    tape.set_grad_enabled(false);
    let sa = model.sa.bind(&tape, false)?;
    let dec = model.dec.bind(&tape, false)?;
    let mut codebook = model.codebook.clone();
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.eval_noise_root(), index as u64));
    let art = forward_scene(
        &tape, &sa, &dec, &mut codebook, cfg, scene, &mut rng, false, false,
    )?;
    Ok(SceneDetails {
        pred_labels: art.pred_labels,
        smask: art.mask.flags().to_vec(),
        idx: art.mask.idx().to_vec(),
        active_count: art.active_count,
    })
}
