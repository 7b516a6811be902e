//! Plateau learning-rate reduction, early stopping and best-model
//! checkpointing. All three count only strict improvements.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallbackConfig {
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub stop_patience: usize,
}

impl Default for CallbackConfig {
    fn default() -> Self {
        Self { lr_factor: 0.1, lr_patience: 5, min_lr: 1e-6, stop_patience: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallbackState {
    pub best_val_metric: Option<f64>,
    pub best_val_loss_lr: f64,
    pub best_val_loss_stop: f64,
    pub epochs_since_improve_lr: usize,
    pub epochs_since_improve_stop: usize,
    pub current_lr: f64,
}

impl CallbackState {
    pub fn new(lr: f64) -> Self {
        Self {
            best_val_metric: None,
            best_val_loss_lr: f64::INFINITY,
            best_val_loss_stop: f64::INFINITY,
            epochs_since_improve_lr: 0,
            epochs_since_improve_stop: 0,
            current_lr: lr,
        }
    }
}

/// Returns the learning rate to use from the next epoch on.
pub fn reduce_lr_on_plateau(state: &mut CallbackState, cfg: &CallbackConfig, val_loss: f64) -> f64 {
    if val_loss < state.best_val_loss_lr {
        state.best_val_loss_lr = val_loss;
        state.epochs_since_improve_lr = 0;
    } else {
        state.epochs_since_improve_lr += 1;
        if state.epochs_since_improve_lr >= cfg.lr_patience {
            state.current_lr = (state.current_lr * cfg.lr_factor).max(cfg.min_lr);
            state.epochs_since_improve_lr = 0;
        }
    }
    state.current_lr
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopSignal {
    Continue,
    Stop,
}

pub fn early_stopping(state: &mut CallbackState, cfg: &CallbackConfig, val_loss: f64) -> StopSignal {
    if val_loss < state.best_val_loss_stop {
        state.best_val_loss_stop = val_loss;
        state.epochs_since_improve_stop = 0;
        StopSignal::Continue
    } else {
        state.epochs_since_improve_stop += 1;
        if state.epochs_since_improve_stop >= cfg.stop_patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }
}

/// Records `val_metric` and reports whether it strictly beats every earlier value.
pub fn is_new_best(state: &mut CallbackState, val_metric: f64) -> bool {
    match state.best_val_metric {
        Some(best) if val_metric <= best => false,
        _ => {
            state.best_val_metric = Some(val_metric);
            true
        }
    }
}

/// File name for a best-model snapshot; `epoch` is 1-based.
pub fn checkpoint_name(epoch: usize, val_metric: f64) -> String {
    format!("best_model_{epoch:02}_{val_metric:.3}.ckpt")
}
