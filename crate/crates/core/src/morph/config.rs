use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSampling {
    Uniform,
    /// Cycles through the listed class indices.
    Fixed(Vec<usize>),
}

fn one() -> f64 {
    1.0
}
fn default_batch() -> usize {
    crate::DEFAULT_BATCH_SIZE
}
fn default_max_iterations() -> u64 {
    1000
}
fn default_snapshots() -> Vec<u64> {
    vec![300, 400, 500, 600, 1000]
}
fn default_grid_every() -> u64 {
    100
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn uniform() -> ClassSampling {
    ClassSampling::Uniform
}

/// Everything that determines one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphRunConfig {
    pub run_id: String,
    pub generator_ckpt: PathBuf,
    pub discriminator_ckpt: PathBuf,
    pub classifier_ckpt: PathBuf,
    /// Feature oracle; when set, every snapshot also gets an evaluation report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_oracle_ckpt: Option<PathBuf>,
    #[serde(default = "one")]
    pub lambda_cls: f64,
    #[serde(default = "one")]
    pub lambda_disc: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
    #[serde(default = "default_snapshots")]
    pub snapshot_at: Vec<u64>,
    #[serde(default = "default_grid_every")]
    pub grid_every: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "uniform")]
    pub class_sampling: ClassSampling,
    /// Zeroes wall-clock fields so identical runs log identical bytes.
    #[serde(default)]
    pub deterministic: bool,
    /// Re-hash the frozen networks after every step.
    #[serde(default)]
    pub debug_freeze_checks: bool,
}

impl MorphRunConfig {
    pub fn new(
        run_id: &str,
        generator_ckpt: impl Into<PathBuf>,
        discriminator_ckpt: impl Into<PathBuf>,
        classifier_ckpt: impl Into<PathBuf>,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            generator_ckpt: generator_ckpt.into(),
            discriminator_ckpt: discriminator_ckpt.into(),
            classifier_ckpt: classifier_ckpt.into(),
            eval_oracle_ckpt: None,
            lambda_cls: 1.0,
            lambda_disc: 1.0,
            batch_size: default_batch(),
            max_iterations: default_max_iterations(),
            snapshot_at: default_snapshots(),
            grid_every: default_grid_every(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            seed: 0,
            class_sampling: ClassSampling::Uniform,
            deterministic: false,
            debug_freeze_checks: false,
        }
    }

    /// Field-level validation; every violated invariant is reported.
    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| errs.push(FieldError {
            field: field.into(),
            message,
        });
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            bad("run_id", format!("`{}` must be non-empty [A-Za-z0-9._-] not starting with '.'", self.run_id));
        }
        for (field, v) in [("lambda_cls", self.lambda_cls), ("lambda_disc", self.lambda_disc)] {
            if !v.is_finite() || v < 0.0 {
                bad(field, format!("must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda_cls + self.lambda_disc <= 0.0 {
            bad("lambda_cls", "lambda_cls + lambda_disc must be > 0".into());
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be positive".into());
        }
        if !self.snapshot_at.windows(2).all(|w| w[0] < w[1]) {
            bad("snapshot_at", "must be strictly ascending".into());
        }
        if self.snapshot_at.iter().any(|&k| k > self.max_iterations) {
            bad("snapshot_at", format!("entries must be <= max_iterations ({})", self.max_iterations));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            bad("learning_rate", format!("must be finite and >= 0, got {}", self.learning_rate));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad(field, format!("must lie in [0, 1), got {b}"));
            }
        }
        if let ClassSampling::Fixed(list) = &self.class_sampling {
            if list.is_empty() {
                bad("class_sampling", "fixed class list must not be empty".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn check(&self) -> Result<()> {
        self.validate().map_err(|errs| {
            config(
                errs.iter()
                    .map(|e| format!("{}: {}", e.field, e.message))
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}
