//! Multi-configuration comparison: trains each configuration over several
//! seeds (one thread per run; every run is individually deterministic) and
//! tabulates the final evaluation metrics.

use std::fmt::Write as _;
use std::time::Instant;

use metaslot_core::metrics::MetricsAggregate;

use crate::config::TrainConfig;
use crate::error::{CliError, Result};
use crate::train::train;

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config_name: String,
    pub seed: u64,
    pub aggregate: MetricsAggregate,
    pub wall_secs: f64,
}

#[derive(Clone, Debug)]
pub struct ConfigSummary {
    pub config_name: String,
    pub seeds: usize,
    pub fg_ari_mean: f64,
    pub fg_ari_std: f64,
    pub mbo_mean: f64,
    pub mbo_std: f64,
    pub ari_mean: f64,
    pub miou_mean: f64,
    pub count_abs_err_mean: f64,
    pub active_count_mean: f64,
}

#[derive(Clone, Debug)]
pub struct CompareTable {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<ConfigSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Trains every (config, seed) pair and aggregates per configuration. Seeds
/// are `base_seed + 0..n_seeds` of each config.
pub fn compare_configs(named: &[(String, TrainConfig)], n_seeds: usize) -> Result<CompareTable> {
    if named.is_empty() {
        return Err(CliError::usage("compare needs at least one config"));
    }
    if n_seeds == 0 {
        return Err(CliError::usage("compare needs at least one seed"));
    }
    let mut jobs = Vec::new();
    for (name, cfg) in named {
        for k in 0..n_seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed + k as u64;
            jobs.push((name.clone(), run_cfg));
        }
    }

    // One single-threaded run per core at a time, so per-run wall time
    // tracks CPU time and runs stay individually deterministic.
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .max(1);
    let mut runs = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(workers) {
        let results: Vec<Result<RunResult>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(name, cfg)| {
                    scope.spawn(move || -> Result<RunResult> {
                        let start = Instant::now();
                        let outcome = train(cfg)?;
                        Ok(RunResult {
                            config_name: name.clone(),
                            seed: cfg.seed,
                            aggregate: outcome.final_report.aggregate,
                            wall_secs: start.elapsed().as_secs_f64(),
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("comparison worker panicked"))
                .collect()
        });
        for r in results {
            runs.push(r?);
        }
    }

    let mut summaries = Vec::new();
    for (name, _) in named {
        let per: Vec<&RunResult> = runs.iter().filter(|r| &r.config_name == name).collect();
        let collect = |f: fn(&MetricsAggregate) -> f64| -> Vec<f64> {
            per.iter().map(|r| f(&r.aggregate)).collect()
        };
        let (fg_ari_mean, fg_ari_std) = mean_std(&collect(|a| a.fg_ari_mean));
        let (mbo_mean, mbo_std) = mean_std(&collect(|a| a.mbo_mean));
        let (ari_mean, _) = mean_std(&collect(|a| a.ari_mean));
        let (miou_mean, _) = mean_std(&collect(|a| a.miou_mean));
        let (count_abs_err_mean, _) = mean_std(&collect(|a| a.count_abs_err_mean));
        let (active_count_mean, _) = mean_std(&collect(|a| a.active_count_mean));
        summaries.push(ConfigSummary {
            config_name: name.clone(),
            seeds: per.len(),
            fg_ari_mean,
            fg_ari_std,
            mbo_mean,
            mbo_std,
            ari_mean,
            miou_mean,
            count_abs_err_mean,
            active_count_mean,
        });
    }
    Ok(CompareTable { runs, summaries })
}

impl CompareTable {
    /// Line-delimited rendering: one `run` record per (config, seed) and one
    /// `summary` record per configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            let a = &r.aggregate;
            let _ = writeln!(
                out,
                "run config={} seed={} fg_ari={:.6} mbo={:.6} ari={:.6} miou={:.6} active_count={:.6} count_abs_err={:.6} secs={:.1}",
                r.config_name,
                r.seed,
                a.fg_ari_mean,
                a.mbo_mean,
                a.ari_mean,
                a.miou_mean,
                a.active_count_mean,
                a.count_abs_err_mean,
                r.wall_secs
            );
        }
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "summary config={} seeds={} fg_ari_mean={:.6} fg_ari_std={:.6} mbo_mean={:.6} mbo_std={:.6} ari_mean={:.6} miou_mean={:.6} active_count_mean={:.6} count_abs_err_mean={:.6}",
                s.config_name,
                s.seeds,
                s.fg_ari_mean,
                s.fg_ari_std,
                s.mbo_mean,
                s.mbo_std,
                s.ari_mean,
                s.miou_mean,
                s.active_count_mean,
                s.count_abs_err_mean
            );
        }
        out
    }

    pub fn summary_of(&self, name: &str) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config_name == name)
    }
}
