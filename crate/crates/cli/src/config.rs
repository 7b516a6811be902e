//! Run configuration file: JSON with a fixed schema; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use dynconv::data::AugmentConfig;
use dynconv::layers::{is_supported, ModelSpec, Preset, Task, SUPPORTED_MATRIX};
use dynconv::train::{CallbackConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn d_lr() -> f64 {
    0.001
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    30
}
fn d_dropout() -> f64 {
    0.2
}
fn d_folds() -> usize {
    10
}
fn d_bank() -> usize {
    4
}
fn d_kr() -> usize {
    32
}
fn d_width() -> f64 {
    1.0
}
fn d_depth() -> usize {
    2
}
fn d_stages() -> usize {
    3
}
fn d_attn_samples() -> usize {
    8
}
fn d_pretrain() -> usize {
    10
}
fn d_preset() -> Preset {
    Preset::BaseCnn
}
fn d_task() -> Task {
    Task::Classify
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_preset")]
    pub preset: Preset,
    #[serde(default = "d_task")]
    pub task: Task,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_folds")]
    pub folds: usize,
    #[serde(default)]
    pub k_active: Option<usize>,
    #[serde(default = "d_bank")]
    pub bank_size: usize,
    #[serde(default = "d_kr")]
    pub kr_dim: usize,
    #[serde(default = "d_width")]
    pub width_multiplier: f64,
    #[serde(default = "d_depth")]
    pub depth: usize,
    #[serde(default = "d_stages")]
    pub stages: usize,
    /// Apply the default augmentation pipeline to image batches.
    #[serde(default)]
    pub augment: bool,
    /// Validation samples whose attention weights are dumped each epoch.
    #[serde(default = "d_attn_samples")]
    pub attn_samples: usize,
    /// Epochs of static pre-training before k-fold runs of dynamic presets.
    #[serde(default = "d_pretrain")]
    pub pretrain_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Failure(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Failure(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !is_supported(self.preset, self.task) {
            return Err(CliError::Failure(format!(
                "preset {} does not support task {}; supported matrix: {SUPPORTED_MATRIX}",
                self.preset, self.task
            )));
        }
        self.train_config(None).validate()?;
        if self.folds < 2 {
            return Err(CliError::Failure(format!("folds must be at least 2, got {}", self.folds)));
        }
        Ok(())
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            seed: self.seed,
            callbacks: CallbackConfig::default(),
            augment: self.augment.then(AugmentConfig::default),
            checkpoint_dir,
        }
    }

    pub fn model_spec(&self, input_shape: &[usize], num_classes: usize) -> ModelSpec {
        ModelSpec {
            preset: self.preset,
            task: self.task,
            input_shape: input_shape.to_vec(),
            num_classes,
            width_multiplier: self.width_multiplier,
            depth: self.depth,
            stages: self.stages,
            bank_size: self.bank_size,
            k_active: self.k_active,
            kr_dim: self.kr_dim,
            reduction: 4,
        }
    }
}
