//! `train`: one training run with report, curves, attention dumps and checkpoints.

use std::path::Path;
use std::time::Instant;

use dynconv::data::{load_dataset, Samples};
use dynconv::layers::{build_model, Mode, Model, ModelSpec};
use dynconv::metrics::{flops_model, FlopReport};
use dynconv::train::{save_checkpoint, train_with, EpochRecord, TrainingLog};
use dynconv::Prng;
use serde::{Deserialize, Serialize};

use super::{base_config, metric_key};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, require_out, write_attention, write_curves, write_json, SCHEMA_VERSION};
use crate::{Cli, TrainArgs};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMetrics {
    pub epoch: usize,
    pub val_metric: f64,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub schema_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub model: ModelSpec,
    pub metric: String,
    pub param_count: usize,
    pub flops_total: u64,
    pub flops: FlopReport,
    pub train_samples: usize,
    pub val_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub final_metrics: FinalMetrics,
    pub best: Option<BestMetrics>,
    pub checkpoints: Vec<String>,
    pub final_checkpoint: String,
    pub wall_clock_seconds: Option<f64>,
}

impl TrainReport {
    pub fn load(path: &Path) -> CliResult<Self> {
        let report: TrainReport = serde_json::from_slice(&std::fs::read(path)?)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(CliError::Failure(format!("unsupported report schema {}", report.schema_version)));
        }
        Ok(report)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub(crate) fn resolve(cli: &Cli, args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = base_config(cli)?;
    if let Some(p) = args.preset {
        cfg.preset = p;
    }
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn build_for(cfg: &RunConfig, data: &Samples, seed: u64) -> CliResult<Model> {
    let spec = cfg.model_spec(data.sample_shape(), data.num_classes);
    Ok(build_model(&spec, &mut Prng::new(seed).derive(0x6d6f_6465))?)
}

pub fn run(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let cfg = resolve(cli, args)?;
    let out = require_out(&cli.out, &cfg.out_dir, "train")?;
    let dataset = cfg.dataset.clone().ok_or_else(|| CliError::Usage("train needs a dataset (--dataset DIR)".into()))?;
    let (train_data, val_data) = load_dataset(&dataset, cfg.task)?;
    let mut model = build_for(&cfg, &train_data, cfg.seed)?;
    prepare_out_dir(&out, cli.force)?;

    let started = Instant::now();
    let attn_subset: Vec<usize> = (0..cfg.attn_samples.min(val_data.len())).collect();
    let attn_inputs = if cfg.preset.has_attention() && !attn_subset.is_empty() {
        Some(val_data.subset(&attn_subset)?.inputs)
    } else {
        None
    };
    let train_cfg = cfg.train_config(Some(out.clone()));
    let log: TrainingLog = train_with(&mut model, &train_data, &val_data, &train_cfg, |m, rec| {
        if let Some(x) = &attn_inputs {
            let pass = m.forward(x, Mode::Eval)?;
            write_attention(&out.join(format!("attn_epoch{}.csv", rec.epoch)), &m.attention(&pass))
                .map_err(|e| dynconv::Error::Validation(e.to_string()))?;
        }
        Ok(())
    })?;
    let last = log.last().expect("at least one epoch").clone();
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &model, last.epoch, Some(last.val_metric))?;
    write_curves(&out.join("curves.csv"), &log.epochs)?;

    let flops = flops_model(&model);
    let best = log.best_epoch.map(|epoch| BestMetrics {
        epoch,
        val_metric: log.best_val_metric.unwrap_or(f64::NAN),
        checkpoint: log.checkpoints.last().map(|p| file_name(p)),
    });
    let report = TrainReport {
        schema_version: SCHEMA_VERSION,
        command: "train".into(),
        config: cfg.clone(),
        model: model.spec.clone(),
        metric: metric_key(cfg.task).into(),
        param_count: model.params.count(),
        flops_total: flops.total,
        flops,
        train_samples: train_data.len(),
        val_samples: val_data.len(),
        epochs: log.epochs.clone(),
        stopped_early: log.stopped_early,
        final_metrics: FinalMetrics {
            epoch: last.epoch,
            train_loss: last.train_loss,
            train_metric: last.train_metric,
            val_loss: last.val_loss,
            val_metric: last.val_metric,
        },
        best,
        checkpoints: log.checkpoints.iter().map(|p| file_name(p)).collect(),
        final_checkpoint: FINAL_CHECKPOINT.into(),
        wall_clock_seconds: args.timing.then(|| started.elapsed().as_secs_f64()),
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "{} on {}: {} epochs, final train {} {:.4}, val {} {:.4}, best val {:.4}",
        cfg.preset,
        dataset.display(),
        log.epochs.len(),
        report.metric,
        last.train_metric,
        report.metric,
        last.val_metric,
        log.best_val_metric.unwrap_or(f64::NAN)
    );
    Ok(())
}
