//! The optimization loop: shuffled mini-batches, Adam, cross-entropy and the
//! per-epoch callbacks.

pub mod adam;
pub mod callbacks;
pub mod checkpoint;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Samples};
use crate::error::{invalid, Error, Result};
use crate::layers::{argmax_predictions, Mode, Model, Task};
use crate::metrics::{accuracy, ConfusionCounts};
use crate::tensor::Prng;

pub use adam::{adam_step, OptimizerState};
pub use callbacks::{
    checkpoint_name, early_stopping, is_new_best, reduce_lr_on_plateau, CallbackConfig, CallbackState, StopSignal,
};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Manifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub callbacks: CallbackConfig,
    pub augment: Option<AugmentConfig>,
    /// Directory for best-model snapshots; `None` disables them.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 30,
            dropout: 0.2,
            seed: 0,
            callbacks: CallbackConfig::default(),
            augment: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch_size and epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch (training mode).
    pub train_loss: f64,
    /// Metric on the full training set in inference mode after the epoch.
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Accuracy for class targets, mIoU for pixel targets.
pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Segment => "miou",
        _ => "accuracy",
    }
}

/// Mean loss and task metric in inference mode.
pub fn evaluate(model: &Model, data: &Samples, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return invalid("cannot evaluate on an empty dataset");
    }
    let segment = model.spec.task == Task::Segment;
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let mut confusion = ConfusionCounts::new(model.spec.num_classes);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.subset(chunk)?;
        let pass = model.forward(&batch.inputs, Mode::Eval)?;
        let (loss, _) = model.loss(&pass.logits, batch.targets(model.spec.task)?)?;
        total += loss * chunk.len() as f64;
        let p = argmax_predictions(&pass.logits);
        if segment {
            confusion.update(&p, batch.masks.as_deref().expect("segment targets"))?;
        } else {
            preds.extend(p);
        }
    }
    let metric = if segment { confusion.miou() } else { accuracy(&preds, &data.labels)? };
    Ok((total / data.len() as f64, metric))
}

/// Trains `model` in place. `on_epoch` runs after every epoch's callbacks.
pub fn train_with(
    model: &mut Model,
    train_data: &Samples,
    val_data: &Samples,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &EpochRecord) -> Result<()>,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    if model.spec.task == Task::Segment && train_data.masks.is_none() {
        return invalid("segment task needs masks in the training data");
    }
    let root = Prng::new(cfg.seed);
    let mut shuffle_rng = root.derive(1);
    let mut dropout_rng = root.derive(2);
    let mut augment_rng = root.derive(3);
    let mut opt = OptimizerState::new(&model.params);
    let mut cb = CallbackState::new(cfg.learning_rate);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=cfg.epochs {
        let lr = cb.current_lr;
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = train_data.subset(chunk)?;
            if let Some(aug) = &cfg.augment {
                batch.augment(aug, &mut augment_rng)?;
            }
            let mode = Mode::Train { rng: &mut dropout_rng, dropout: cfg.dropout };
            let (loss, grads, _) = model.loss_and_grads(&batch.inputs, batch.targets(model.spec.task)?, mode)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {}", b + 1)));
            }
            adam_step(&mut model.params, &grads, &mut opt, lr)?;
            loss_sum += loss * chunk.len() as f64;
            log.steps += 1;
        }
        let (_, train_metric) = evaluate(model, train_data, cfg.batch_size)?;
        let (val_loss, val_metric) = evaluate(model, val_data, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let record = EpochRecord { epoch, train_loss: loss_sum / train_data.len() as f64, train_metric, val_loss, val_metric, lr };

        if is_new_best(&mut cb, val_metric) {
            log.best_epoch = Some(epoch);
            log.best_val_metric = Some(val_metric);
            if let Some(dir) = &cfg.checkpoint_dir {
                let path = dir.join(checkpoint_name(epoch, val_metric));
                match save_checkpoint(&path, model, epoch, Some(val_metric)) {
                    Ok(()) => log.checkpoints.push(path),
                    Err(e) => log::warn!("could not write checkpoint {}: {e}", path.display()),
                }
            }
        }
        reduce_lr_on_plateau(&mut cb, &cfg.callbacks, val_loss);
        let stop = early_stopping(&mut cb, &cfg.callbacks, val_loss);
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {val_loss:.4} val_{} {val_metric:.4} lr {lr:e}",
            record.train_loss,
            metric_name(model.spec.task)
        );
        on_epoch(model, &record)?;
        log.epochs.push(record);
        if stop == StopSignal::Stop {
            log.stopped_early = true;
            break;
        }
    }
    Ok(log)
}

pub fn train(model: &mut Model, train_data: &Samples, val_data: &Samples, cfg: &TrainConfig) -> Result<TrainingLog> {
    train_with(model, train_data, val_data, cfg, |_, _| Ok(()))
}
