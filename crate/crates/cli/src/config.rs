//! Flat key=value training configuration with a strict schema.
//!
//! Every field has a documented default; unknown or duplicate keys are
//! rejected. The canonical rendering (fixed key order) is embedded in
//! checkpoints and hashed so a checkpoint can be traced back to its exact
//! configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use metaslot_core::codebook::EmaAssignment;
use metaslot_core::scene::{SceneSpec, ShapeKind};
use metaslot_core::slots::InitMode;

use crate::error::{CliError, Result};

/// Which aggregator the harness trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    /// Vanilla slot attention: shared-Gaussian sampled queries, full
    /// backprop through all iterations.
    SlotAttention,
    /// Fixed-slot learned-query attention with bi-level gradient truncation
    /// (the strongest fixed-slot baseline).
    LearnedQuerySa,
    /// The two-stage prototype-pruned aggregator.
    Metaslot,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::SlotAttention => "slot_attention",
            Aggregator::LearnedQuerySa => "learned_query_sa",
            Aggregator::Metaslot => "metaslot",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub aggregator: Aggregator,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub scene_height: usize,
    pub scene_width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub jitter_std: f64,

    pub slot_dim: usize,
    pub k_max: usize,
    /// Iterations per stage; the fixed-slot baselines run `2 * iterations`
    /// so every aggregator sees the same update budget.
    pub iterations: usize,
    pub sa_hidden: usize,
    pub decoder_hidden: usize,

    pub k_protos: usize,
    pub ema_rate: f64,
    pub timeout: u64,
    pub codebook_init_scale: f64,
    pub sigma_noise: f64,

    pub enable_noise: bool,
    pub enable_mask: bool,
    pub enable_straight_through: bool,
    pub ema_assignment: EmaAssignment,
    /// `None` resolves per aggregator: shared Gaussian for vanilla slot
    /// attention, per-slot learned queries otherwise.
    pub init_mode: Option<InitMode>,
    pub residual_mlp: bool,
    pub stochastic_stage1: bool,

    pub eval_every: usize,
    pub eval_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            aggregator: Aggregator::Metaslot,
            seed: 1,
            steps: 5000,
            batch_size: 16,
            learning_rate: 4e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            scene_height: 16,
            scene_width: 16,
            min_objects: 2,
            max_objects: 5,
            jitter_std: 0.02,
            slot_dim: metaslot_core::scene::FEATURE_DIM,
            k_max: 6,
            iterations: 3,
            sa_hidden: 16,
            decoder_hidden: 32,
            k_protos: 32,
            ema_rate: 0.01,
            timeout: 1024,
            codebook_init_scale: 1.0,
            sigma_noise: 0.5,
            enable_noise: true,
            enable_mask: true,
            enable_straight_through: true,
            ema_assignment: EmaAssignment::Requantize,
            init_mode: None,
            residual_mlp: true,
            stochastic_stage1: false,
            eval_every: 500,
            eval_scenes: 200,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::config(format!("{key}: expected true/false, got {v}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Parses the flat key=value format. Lines starting with `#` and blank
    /// lines are skipped; unknown and duplicate keys are errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::config(format!("duplicate key {key}")));
            }
            match key {
                "aggregator" => {
                    cfg.aggregator = match value {
                        "slot_attention" => Aggregator::SlotAttention,
                        "learned_query_sa" => Aggregator::LearnedQuerySa,
                        "metaslot" => Aggregator::Metaslot,
                        _ => {
                            return Err(CliError::config(format!(
                                "aggregator: unknown value {value:?}"
                            )))
                        }
                    }
                }
                "seed" => cfg.seed = parse_num(key, value)?,
                "steps" => cfg.steps = parse_num(key, value)?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "adam_beta1" => cfg.adam_beta1 = parse_num(key, value)?,
                "adam_beta2" => cfg.adam_beta2 = parse_num(key, value)?,
                "adam_eps" => cfg.adam_eps = parse_num(key, value)?,
                "scene_height" => cfg.scene_height = parse_num(key, value)?,
                "scene_width" => cfg.scene_width = parse_num(key, value)?,
                "min_objects" => cfg.min_objects = parse_num(key, value)?,
                "max_objects" => cfg.max_objects = parse_num(key, value)?,
                "jitter_std" => cfg.jitter_std = parse_num(key, value)?,
                "slot_dim" => cfg.slot_dim = parse_num(key, value)?,
                "k_max" => cfg.k_max = parse_num(key, value)?,
                "iterations" => cfg.iterations = parse_num(key, value)?,
                "sa_hidden" => cfg.sa_hidden = parse_num(key, value)?,
                "decoder_hidden" => cfg.decoder_hidden = parse_num(key, value)?,
                "k_protos" => cfg.k_protos = parse_num(key, value)?,
                "ema_rate" => cfg.ema_rate = parse_num(key, value)?,
                "timeout" => cfg.timeout = parse_num(key, value)?,
                "codebook_init_scale" => cfg.codebook_init_scale = parse_num(key, value)?,
                "sigma_noise" => cfg.sigma_noise = parse_num(key, value)?,
                "enable_noise" => cfg.enable_noise = parse_bool(key, value)?,
                "enable_mask" => cfg.enable_mask = parse_bool(key, value)?,
                "enable_straight_through" => {
                    cfg.enable_straight_through = parse_bool(key, value)?
                }
                "ema_assignment" => {
                    cfg.ema_assignment = match value {
                        "requantize" => EmaAssignment::Requantize,
                        "stage1" => EmaAssignment::Stage1Idx,
                        _ => {
                            return Err(CliError::config(format!(
                                "ema_assignment: expected requantize/stage1, got {value:?}"
                            )))
                        }
                    }
                }
                "init_mode" => {
                    cfg.init_mode = Some(match value {
                        "learned_queries" => InitMode::LearnedQueries,
                        "shared_gaussian" => InitMode::SharedGaussian,
                        _ => {
                            return Err(CliError::config(format!(
                                "init_mode: expected learned_queries/shared_gaussian, got {value:?}"
                            )))
                        }
                    })
                }
                "residual_mlp" => cfg.residual_mlp = parse_bool(key, value)?,
                "stochastic_stage1" => cfg.stochastic_stage1 = parse_bool(key, value)?,
                "eval_every" => cfg.eval_every = parse_num(key, value)?,
                "eval_scenes" => cfg.eval_scenes = parse_num(key, value)?,
                _ => return Err(CliError::config(format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        TrainConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_dim != metaslot_core::scene::FEATURE_DIM {
            return Err(CliError::config(format!(
                "slot_dim must equal the synthetic feature dimension {}",
                metaslot_core::scene::FEATURE_DIM
            )));
        }
        if self.k_max == 0 {
            return Err(CliError::config("k_max must be >= 1"));
        }
        if self.aggregator == Aggregator::Metaslot && self.k_max > self.k_protos {
            return Err(CliError::config(format!(
                "k_max {} must not exceed k_protos {} (every slot needs a distinct prototype)",
                self.k_max, self.k_protos
            )));
        }
        if self.iterations == 0 {
            return Err(CliError::config("iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(CliError::config("batch_size must be >= 1"));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate <= 1.0) {
            return Err(CliError::config("ema_rate must be in (0, 1]"));
        }
        if self.learning_rate <= 0.0 {
            return Err(CliError::config("learning_rate must be > 0"));
        }
        if self.eval_scenes == 0 {
            return Err(CliError::config("eval_scenes must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(CliError::config("eval_every must be >= 1"));
        }
        self.scene_spec().validate().map_err(CliError::from)?;
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            height: self.scene_height,
            width: self.scene_width,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            shape_vocab: vec![ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Triangle],
            color_vocab: 3,
            jitter_std: self.jitter_std,
        }
    }

    /// Initialization mode after per-aggregator resolution.
    pub fn resolved_init_mode(&self) -> InitMode {
        self.init_mode.unwrap_or(match self.aggregator {
            Aggregator::SlotAttention => InitMode::SharedGaussian,
            _ => InitMode::LearnedQueries,
        })
    }

    /// Canonical rendering with fixed key order; parsing it back yields an
    /// identical configuration.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "aggregator = {}", self.aggregator.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {:e}", self.learning_rate);
        let _ = writeln!(s, "adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "adam_eps = {:e}", self.adam_eps);
        let _ = writeln!(s, "scene_height = {}", self.scene_height);
        let _ = writeln!(s, "scene_width = {}", self.scene_width);
        let _ = writeln!(s, "min_objects = {}", self.min_objects);
        let _ = writeln!(s, "max_objects = {}", self.max_objects);
        let _ = writeln!(s, "jitter_std = {}", self.jitter_std);
        let _ = writeln!(s, "slot_dim = {}", self.slot_dim);
        let _ = writeln!(s, "k_max = {}", self.k_max);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "sa_hidden = {}", self.sa_hidden);
        let _ = writeln!(s, "decoder_hidden = {}", self.decoder_hidden);
        let _ = writeln!(s, "k_protos = {}", self.k_protos);
        let _ = writeln!(s, "ema_rate = {}", self.ema_rate);
        let _ = writeln!(s, "timeout = {}", self.timeout);
        let _ = writeln!(s, "codebook_init_scale = {}", self.codebook_init_scale);
        let _ = writeln!(s, "sigma_noise = {}", self.sigma_noise);
        let _ = writeln!(s, "enable_noise = {}", self.enable_noise);
        let _ = writeln!(s, "enable_mask = {}", self.enable_mask);
        let _ = writeln!(s, "enable_straight_through = {}", self.enable_straight_through);
        let _ = writeln!(
            s,
            "ema_assignment = {}",
            match self.ema_assignment {
                EmaAssignment::Requantize => "requantize",
                EmaAssignment::Stage1Idx => "stage1",
            }
        );
        if let Some(mode) = self.init_mode {
            let _ = writeln!(
                s,
                "init_mode = {}",
                match mode {
                    InitMode::LearnedQueries => "learned_queries",
                    InitMode::SharedGaussian => "shared_gaussian",
                }
            );
        }
        let _ = writeln!(s, "residual_mlp = {}", self.residual_mlp);
        let _ = writeln!(s, "stochastic_stage1 = {}", self.stochastic_stage1);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_scenes = {}", self.eval_scenes);
        s
    }

    /// FNV-1a hash of the canonical rendering.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    // Derived stream roots. Train and eval use distinct tags so their scene
    // streams are disjoint.
    pub fn train_scene_root(&self) -> u64 {
        metaslot_core::rng::derive_seed(self.seed, 0x5343_0001)
    }

    pub fn train_noise_root(&self) -> u64 {
        metaslot_core::rng::derive_seed(self.seed, 0x5343_0002)
    }

    pub fn eval_scene_root(&self) -> u64 {
        metaslot_core::rng::derive_seed(self.seed, 0x5343_0003)
    }

    pub fn eval_noise_root(&self) -> u64 {
        metaslot_core::rng::derive_seed(self.seed, 0x5343_0004)
    }

    pub fn param_init_seed(&self) -> u64 {
        metaslot_core::rng::derive_seed(self.seed, 0x5343_0005)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical() {
        let cfg = TrainConfig::default();
        let parsed = TrainConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(parsed.canonical(), cfg.canonical());
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(TrainConfig::parse("nope = 1").is_err());
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(TrainConfig::parse("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = TrainConfig::parse("# hello\n\nseed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn k_max_codebook_constraint() {
        assert!(TrainConfig::parse("k_max = 40").is_err());
        // fine for the baseline aggregator, which has no codebook
        assert!(TrainConfig::parse("aggregator = learned_query_sa\nk_max = 40").is_ok());
    }

    #[test]
    fn init_mode_resolution() {
        let vanilla = TrainConfig::parse("aggregator = slot_attention").unwrap();
        assert_eq!(vanilla.resolved_init_mode(), InitMode::SharedGaussian);
        let ms = TrainConfig::parse("aggregator = metaslot").unwrap();
        assert_eq!(ms.resolved_init_mode(), InitMode::LearnedQueries);
        let forced =
            TrainConfig::parse("aggregator = slot_attention\ninit_mode = learned_queries")
                .unwrap();
        assert_eq!(forced.resolved_init_mode(), InitMode::LearnedQueries);
    }

    #[test]
    fn stream_roots_are_distinct() {
        let cfg = TrainConfig::default();
        let roots = [
            cfg.train_scene_root(),
            cfg.train_noise_root(),
            cfg.eval_scene_root(),
            cfg.eval_noise_root(),
            cfg.param_init_seed(),
        ];
        let mut sorted = roots.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), roots.len());
    }
}
