//! Flat `key = value` run configuration.
//!
//! One line per setting, `#` starts a comment, no nesting. Every key is
//! validated against the registered schema below; unknown keys are
//! rejected by name so typos fail loudly instead of silently using a
//! default. Later assignments win, which is also how command-line
//! `KEY=VALUE` overrides work: they are applied after the file.

use std::str::FromStr;

use thiserror::Error;

use crate::harness::task::{TaskKind, TaskSpec};
use crate::harness::train::TrainConfig;
use crate::medium::{Mapping, MediumConfig, MediumMode, Pooling};
use crate::model::{ModelConfig, Variant};

/// Environment variable consulted for `out.dir` when the config does not
/// set one.
pub const OUT_DIR_ENV: &str = "RRWKV_OUT_DIR";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Architectures the bench and pathlen commands can measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Attention,
    Rwkv,
    Rrwkv,
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attention" => Ok(Arch::Attention),
            "rwkv" => Ok(Arch::Rwkv),
            "rrwkv" => Ok(Arch::Rrwkv),
            other => {
                Err(format!("unknown architecture {other:?} (expected attention, rwkv, or rrwkv)"))
            }
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Attention => "attention",
            Arch::Rwkv => "rwkv",
            Arch::Rrwkv => "rrwkv",
        })
    }
}

/// Every setting a run can observe, with defaults suitable for a quick
/// desk-scale experiment. Construct with [`RunConfig::from_text`] or start
/// from `RunConfig::default()` and [`RunConfig::apply`] overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory for CSVs and checkpoints. Deliberately excluded
    /// from [`RunConfig::echo`] so two runs of the same experiment in
    /// different directories produce byte-identical artifacts.
    pub out_dir: String,

    pub model_d: usize,
    pub model_layers: usize,
    pub model_vocab: usize,
    pub model_variant: Variant,
    pub model_medium_interval: usize,
    pub model_squeeze_width: usize,
    pub model_max_mediums: usize,
    pub model_mapping_mode: Mapping,
    pub model_medium_mode: MediumMode,
    pub model_pooling: Pooling,

    pub task_kind: TaskKind,
    pub task_length: usize,
    pub task_gap: usize,

    pub train_steps: usize,
    pub train_batch_size: usize,
    pub train_learning_rate: f64,
    pub train_eval_interval: usize,
    pub train_eval_samples: usize,
    pub train_fixed_batch: bool,
    pub train_stop_accuracy: Option<f64>,

    /// Checkpoint file the eval command loads. Required there, unused
    /// elsewhere.
    pub eval_checkpoint: String,
    pub eval_samples: usize,

    /// Independent model initializations audited by gradcheck.
    pub gradcheck_seeds: usize,

    pub bench_archs: Vec<Arch>,
    pub bench_n_grid: Vec<usize>,
    pub bench_d: usize,
    pub bench_s_grid: Vec<usize>,

    pub pathlen_archs: Vec<Arch>,
    pub pathlen_n_grid: Vec<usize>,
    pub pathlen_s_grid: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: std::env::var(OUT_DIR_ENV).unwrap_or_else(|_| "runs".to_string()),
            model_d: 32,
            model_layers: 2,
            model_vocab: 16,
            model_variant: Variant::Rrwkv,
            model_medium_interval: 8,
            model_squeeze_width: 8,
            model_max_mediums: 64,
            model_mapping_mode: Mapping::Causal,
            model_medium_mode: MediumMode::GateLiteral,
            model_pooling: Pooling::Mean,
            task_kind: TaskKind::Recall,
            task_length: 80,
            task_gap: 64,
            train_steps: 1000,
            train_batch_size: 16,
            train_learning_rate: 3e-3,
            train_eval_interval: 50,
            train_eval_samples: 64,
            train_fixed_batch: false,
            train_stop_accuracy: Some(0.9),
            eval_checkpoint: String::new(),
            eval_samples: 64,
            gradcheck_seeds: 3,
            bench_archs: vec![Arch::Attention, Arch::Rwkv, Arch::Rrwkv],
            bench_n_grid: vec![128, 256, 512, 1024, 2048],
            bench_d: 64,
            bench_s_grid: vec![16, 32, 64],
            pathlen_archs: vec![Arch::Rwkv, Arch::Attention, Arch::Rrwkv],
            pathlen_n_grid: vec![16, 64, 256, 1024],
            pathlen_s_grid: vec![4, 8, 16, 64],
        }
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("{:?}: {e}", value),
    })
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, _> =
        value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| scalar(key, s)).collect();
    let items = items?;
    if items.is_empty() {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: "empty list".to_string(),
        });
    }
    Ok(items)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parse a whole config file on top of the defaults, then validate.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: idx + 1, text: raw.trim().to_string() });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `KEY=VALUE` override strings (from the command line) and
    /// re-validate.
    pub fn apply(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(ConfigError::Syntax { line: 0, text: item.clone() });
            };
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Assign one key. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = scalar(key, value)?,
            "out.dir" => self.out_dir = value.to_string(),
            "model.d" => self.model_d = scalar(key, value)?,
            "model.layers" => self.model_layers = scalar(key, value)?,
            "model.vocab" => self.model_vocab = scalar(key, value)?,
            "model.variant" => self.model_variant = scalar(key, value)?,
            "model.medium_interval" => self.model_medium_interval = scalar(key, value)?,
            "model.squeeze_width" => self.model_squeeze_width = scalar(key, value)?,
            "model.max_mediums" => self.model_max_mediums = scalar(key, value)?,
            "model.mapping_mode" => self.model_mapping_mode = scalar(key, value)?,
            "model.medium_mode" => self.model_medium_mode = scalar(key, value)?,
            "model.pooling" => self.model_pooling = scalar(key, value)?,
            "task.kind" => self.task_kind = scalar(key, value)?,
            "task.length" => self.task_length = scalar(key, value)?,
            "task.gap" => self.task_gap = scalar(key, value)?,
            "train.steps" => self.train_steps = scalar(key, value)?,
            "train.batch_size" => self.train_batch_size = scalar(key, value)?,
            "train.learning_rate" => self.train_learning_rate = scalar(key, value)?,
            "train.eval_interval" => self.train_eval_interval = scalar(key, value)?,
            "train.eval_samples" => self.train_eval_samples = scalar(key, value)?,
            "train.fixed_batch" => self.train_fixed_batch = scalar(key, value)?,
            "train.stop_accuracy" => {
                self.train_stop_accuracy =
                    if value == "none" { None } else { Some(scalar(key, value)?) }
            }
            "eval.checkpoint" => self.eval_checkpoint = value.to_string(),
            "eval.samples" => self.eval_samples = scalar(key, value)?,
            "gradcheck.seeds" => self.gradcheck_seeds = scalar(key, value)?,
            "bench.archs" => self.bench_archs = list(key, value)?,
            "bench.n_grid" => self.bench_n_grid = list(key, value)?,
            "bench.d" => self.bench_d = scalar(key, value)?,
            "bench.s_grid" => self.bench_s_grid = list(key, value)?,
            "pathlen.archs" => self.pathlen_archs = list(key, value)?,
            "pathlen.n_grid" => self.pathlen_n_grid = list(key, value)?,
            "pathlen.s_grid" => self.pathlen_s_grid = list(key, value)?,
            other => return Err(ConfigError::UnknownKey { key: other.to_string() }),
        }
        Ok(())
    }

    /// Cross-field checks that no single assignment can see.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(name: &str, v: usize) -> Result<(), ConfigError> {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
            Ok(())
        }
        positive("model.d", self.model_d)?;
        positive("model.layers", self.model_layers)?;
        positive("model.medium_interval", self.model_medium_interval)?;
        positive("model.squeeze_width", self.model_squeeze_width)?;
        positive("model.max_mediums", self.model_max_mediums)?;
        positive("task.length", self.task_length)?;
        positive("train.steps", self.train_steps)?;
        positive("train.batch_size", self.train_batch_size)?;
        positive("train.eval_interval", self.train_eval_interval)?;
        positive("train.eval_samples", self.train_eval_samples)?;
        positive("eval.samples", self.eval_samples)?;
        positive("gradcheck.seeds", self.gradcheck_seeds)?;
        positive("bench.d", self.bench_d)?;
        if self.model_vocab < 4 {
            return Err(ConfigError::Invalid(
                "model.vocab must be at least 4 (filler, query, two payload ids)".to_string(),
            ));
        }
        match self.task_kind {
            TaskKind::Recall => {
                if self.task_length < self.task_gap + 4 {
                    return Err(ConfigError::Invalid(format!(
                        "task.length must be at least task.gap + 4 for recall (got length {} with gap {})",
                        self.task_length, self.task_gap
                    )));
                }
            }
            TaskKind::Copy => {
                if self.task_length < self.task_gap + 3 {
                    return Err(ConfigError::Invalid(format!(
                        "task.length must be at least task.gap + 3 for copy (got length {} with gap {})",
                        self.task_length, self.task_gap
                    )));
                }
            }
        }
        if self.model_variant == Variant::Rrwkv {
            let scheduled = (self.task_length / self.model_medium_interval).max(1);
            if scheduled > self.model_max_mediums {
                return Err(ConfigError::Invalid(format!(
                    "task.length {} with model.medium_interval {} schedules {} mediums, over model.max_mediums {}",
                    self.task_length, self.model_medium_interval, scheduled, self.model_max_mediums
                )));
            }
        }
        if let Some(a) = self.train_stop_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(ConfigError::Invalid(format!(
                    "train.stop_accuracy must lie in [0, 1] or be `none` (got {a})"
                )));
            }
        }
        if !(self.train_learning_rate.is_finite() && self.train_learning_rate > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "train.learning_rate must be positive and finite (got {})",
                self.train_learning_rate
            )));
        }
        for (name, grid) in [
            ("bench.n_grid", &self.bench_n_grid),
            ("bench.s_grid", &self.bench_s_grid),
            ("pathlen.n_grid", &self.pathlen_n_grid),
            ("pathlen.s_grid", &self.pathlen_s_grid),
        ] {
            if grid.contains(&0) {
                return Err(ConfigError::Invalid(format!("{name} entries must be at least 1")));
            }
        }
        Ok(())
    }

    /// The resolved settings, one `key = value` line each, in schema order.
    /// `out.dir` is omitted on purpose: the echo describes the experiment,
    /// not where it landed, and must be byte-identical across reruns.
    pub fn echo(&self) -> String {
        let stop = match self.train_stop_accuracy {
            Some(a) => a.to_string(),
            None => "none".to_string(),
        };
        let mut s = String::new();
        for (key, value) in [
            ("seed", self.seed.to_string()),
            ("model.d", self.model_d.to_string()),
            ("model.layers", self.model_layers.to_string()),
            ("model.vocab", self.model_vocab.to_string()),
            ("model.variant", self.model_variant.to_string()),
            ("model.medium_interval", self.model_medium_interval.to_string()),
            ("model.squeeze_width", self.model_squeeze_width.to_string()),
            ("model.max_mediums", self.model_max_mediums.to_string()),
            ("model.mapping_mode", self.model_mapping_mode.to_string()),
            ("model.medium_mode", self.model_medium_mode.to_string()),
            ("model.pooling", self.model_pooling.to_string()),
            ("task.kind", self.task_kind.to_string()),
            ("task.length", self.task_length.to_string()),
            ("task.gap", self.task_gap.to_string()),
            ("train.steps", self.train_steps.to_string()),
            ("train.batch_size", self.train_batch_size.to_string()),
            ("train.learning_rate", self.train_learning_rate.to_string()),
            ("train.eval_interval", self.train_eval_interval.to_string()),
            ("train.eval_samples", self.train_eval_samples.to_string()),
            ("train.fixed_batch", self.train_fixed_batch.to_string()),
            ("train.stop_accuracy", stop),
            ("eval.checkpoint", self.eval_checkpoint.clone()),
            ("eval.samples", self.eval_samples.to_string()),
            ("gradcheck.seeds", self.gradcheck_seeds.to_string()),
            ("bench.archs", join(&self.bench_archs)),
            ("bench.n_grid", join(&self.bench_n_grid)),
            ("bench.d", self.bench_d.to_string()),
            ("bench.s_grid", join(&self.bench_s_grid)),
            ("pathlen.archs", join(&self.pathlen_archs)),
            ("pathlen.n_grid", join(&self.pathlen_n_grid)),
            ("pathlen.s_grid", join(&self.pathlen_s_grid)),
        ] {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&value);
            s.push('\n');
        }
        s
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(
            self.model_d,
            self.model_layers,
            self.model_vocab,
            self.model_variant,
            MediumConfig::new(
                self.model_medium_interval,
                self.model_squeeze_width,
                self.model_max_mediums,
                self.model_mapping_mode,
                self.model_medium_mode,
                self.model_pooling,
            ),
        )
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::new(self.task_kind, self.task_length, self.task_gap, self.model_vocab)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch_size: self.train_batch_size,
            learning_rate: self.train_learning_rate,
            eval_interval: self.train_eval_interval,
            eval_samples: self.train_eval_samples,
            seed: self.seed,
            fixed_batch: self.train_fixed_batch,
            stop_accuracy: self.train_stop_accuracy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::from_text("").unwrap();
        assert_eq!(cfg.model_d, 32);
        assert_eq!(cfg.model_variant, Variant::Rrwkv);
        assert_eq!(cfg.bench_n_grid, vec![128, 256, 512, 1024, 2048]);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "\n# a comment\n  model.d = 8   # trailing note\n\nseed=7\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.model_d, 8);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn later_assignment_wins() {
        let cfg = RunConfig::from_text("model.d = 8\nmodel.d = 16\n").unwrap();
        assert_eq!(cfg.model_d, 16);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_text("model.dd = 8\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { key: "model.dd".to_string() });
        assert!(err.to_string().contains("model.dd"));
    }

    #[test]
    fn missing_equals_is_a_syntax_error_with_line() {
        let err = RunConfig::from_text("model.d = 8\njust words\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = RunConfig::from_text("model.d = soon\n").unwrap_err();
        match err {
            ConfigError::BadValue { key, .. } => assert_eq!(key, "model.d"),
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn zero_layers_rejected() {
        let err = RunConfig::from_text("model.layers = 0\n").unwrap_err();
        assert!(err.to_string().contains("model.layers"));
    }

    #[test]
    fn recall_layout_must_fit() {
        let err = RunConfig::from_text("task.length = 60\ntask.gap = 64\n").unwrap_err();
        assert!(err.to_string().contains("task.length"));
    }

    #[test]
    fn medium_capacity_checked_against_task_length() {
        let err = RunConfig::from_text(
            "task.length = 130\ntask.gap = 4\nmodel.medium_interval = 4\nmodel.max_mediums = 8\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("model.max_mediums"));
        // The plain variant never schedules mediums, so the same shape is
        // fine there.
        RunConfig::from_text(
            "task.length = 130\ntask.gap = 4\nmodel.medium_interval = 4\nmodel.max_mediums = 8\nmodel.variant = rwkv\n",
        )
        .unwrap();
    }

    #[test]
    fn overrides_apply_after_file() {
        let mut cfg = RunConfig::from_text("model.d = 8\n").unwrap();
        cfg.apply(&["model.d=24".to_string(), "seed=3".to_string()]).unwrap();
        assert_eq!(cfg.model_d, 24);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn override_without_equals_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply(&["model.d".to_string()]), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn stop_accuracy_none_and_range() {
        let cfg = RunConfig::from_text("train.stop_accuracy = none\n").unwrap();
        assert_eq!(cfg.train_stop_accuracy, None);
        assert!(RunConfig::from_text("train.stop_accuracy = 1.5\n").is_err());
    }

    #[test]
    fn lists_parse_with_spaces() {
        let cfg =
            RunConfig::from_text("bench.n_grid = 64, 128 ,256\nbench.archs = rwkv\n").unwrap();
        assert_eq!(cfg.bench_n_grid, vec![64, 128, 256]);
        assert_eq!(cfg.bench_archs, vec![Arch::Rwkv]);
    }

    #[test]
    fn echo_round_trips_and_omits_out_dir() {
        let mut cfg =
            RunConfig::from_text("model.d = 12\ntask.gap = 16\ntask.length = 40\n").unwrap();
        cfg.out_dir = "somewhere/else".to_string();
        let echo = cfg.echo();
        assert!(!echo.contains("out.dir"));
        let reparsed = RunConfig::from_text(&echo).unwrap();
        // Everything but the output directory survives the round trip.
        let mut expect = cfg.clone();
        expect.out_dir = reparsed.out_dir.clone();
        assert_eq!(reparsed, expect);
    }

    #[test]
    fn constructors_match_fields() {
        let cfg =
            RunConfig::from_text("model.d = 8\nmodel.vocab = 10\ntask.length = 20\ntask.gap = 6\n")
                .unwrap();
        let mc = cfg.model_config();
        assert_eq!((mc.dim, mc.layers, mc.vocab), (8, 2, 10));
        let ts = cfg.task_spec();
        assert_eq!((ts.length, ts.gap, ts.vocab), (20, 6, 10));
        let tc = cfg.train_config();
        assert_eq!(tc.seed, cfg.seed);
        assert_eq!(tc.batch_size, cfg.train_batch_size);
    }
}
