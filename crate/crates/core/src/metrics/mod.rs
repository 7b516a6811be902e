//! Task metrics: accuracy, mean IoU, k-fold summary statistics and FLOPs.

pub mod flops;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use flops::{flops_conv2d, flops_dense, flops_model, two_layer_fixture, CostCategory, FlopReport, LayerCost};

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return invalid("accuracy of an empty prediction set");
    }
    if predictions.len() != labels.len() {
        return invalid(format!("{} predictions for {} labels", predictions.len(), labels.len()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Per-class pixel counts for a pair of label maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds one pair of masks; may be called repeatedly to pool a dataset.
    pub fn update(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return invalid(format!("mask sizes differ: {} vs {}", pred.len(), gt.len()));
        }
        let c = self.num_classes();
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= c || g >= c {
                return invalid(format!("label {} out of range for {c} classes", p.max(g)));
            }
            if p == g {
                self.tp[g] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    /// IoU per class; classes absent from both masks score 1.
    pub fn iou(&self) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                if denom == 0 {
                    1.0
                } else {
                    self.tp[c] as f64 / denom as f64
                }
            })
            .collect()
    }

    pub fn miou(&self) -> f64 {
        let iou = self.iou();
        iou.iter().sum::<f64>() / iou.len() as f64
    }
}

pub fn miou(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<f64> {
    if num_classes == 0 {
        return invalid("miou needs at least one class");
    }
    let mut counts = ConfusionCounts::new(num_classes);
    counts.update(pred, gt)?;
    Ok(counts.miou())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub std: f64,
}

pub fn kfold_stats(folds: &[FoldResult]) -> Result<FoldSummary> {
    if folds.len() < 2 {
        return invalid(format!("k-fold statistics need at least 2 folds, got {}", folds.len()));
    }
    let n = folds.len() as f64;
    let mean = folds.iter().map(|f| f.accuracy).sum::<f64>() / n;
    let var = folds.iter().map(|f| (f.accuracy - mean).powi(2)).sum::<f64>() / n;
    Ok(FoldSummary { mean, std: var.sqrt() })
}
