//! `kfold`: stratified k-fold training on a time-series dataset, or the
//! summary of fold accuracies read from a file.

use std::fs;
use std::path::Path;

use dynconv::data::{load_dataset, stratified_kfold, Samples};
use dynconv::layers::{build_model, Model, Preset, Task};
use dynconv::metrics::{kfold_stats, FoldResult, FoldSummary};
use dynconv::train::{evaluate, train};
use dynconv::{Prng, Tensor};
use serde::{Deserialize, Serialize};

use super::base_config;
use super::train::build_for;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, write_json, SCHEMA_VERSION};
use crate::{Cli, KfoldArgs};

/// Std of the noise added when tiling pretrained kernels into a bank.
pub const BANK_NOISE_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfoldReport {
    pub schema_version: u32,
    pub command: String,
    pub source: String,
    pub config: Option<RunConfig>,
    pub folds: Vec<FoldResult>,
    pub summary: FoldSummary,
}

/// Reads fold accuracies: one record per line, the last field is the
/// accuracy and a preceding field, if any, the loss. Blank lines, `#`
/// comments and non-numeric header lines are skipped.
pub fn read_folds_file(path: &Path) -> CliResult<Vec<FoldResult>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    let mut folds = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c == '\t' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let Some(Ok(accuracy)) = fields.last().map(|f| f.parse::<f64>()) else { continue };
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(CliError::Failure(format!("accuracy {accuracy} outside [0, 1] in {}", path.display())));
        }
        let loss = if fields.len() >= 2 { fields[fields.len() - 2].parse().unwrap_or(f64::NAN) } else { f64::NAN };
        folds.push(FoldResult { fold_index: folds.len(), loss, accuracy });
    }
    Ok(folds)
}

fn concat(a: &Samples, b: &Samples) -> CliResult<Samples> {
    let mut shape = a.inputs.shape().to_vec();
    shape[0] += b.len();
    let mut data = a.inputs.data().to_vec();
    data.extend_from_slice(b.inputs.data());
    let mut labels = a.labels.clone();
    labels.extend_from_slice(&b.labels);
    Ok(Samples::new(Tensor::new(shape, data)?, labels, None, a.num_classes.max(b.num_classes))?)
}

/// Trains a static sibling, tiles its kernels into the dynamic model's
/// banks and freezes them.
fn pretrained_dynamic(cfg: &RunConfig, train_data: &Samples, val_data: &Samples, seed: u64) -> CliResult<Model> {
    let depth = if cfg.preset == Preset::Net1Dcnn { 1 } else { 2 };
    let static_cfg = RunConfig { preset: Preset::BaseCnn, depth, epochs: cfg.pretrain_epochs, ..cfg.clone() };
    let mut base = build_for(&static_cfg, train_data, seed)?;
    train(&mut base, train_data, val_data, &static_cfg.train_config(None))?;
    let mut model = build_for(cfg, train_data, seed)?;
    model.transfer_from(&base, BANK_NOISE_STD, &mut Prng::new(seed).derive(0x7469_6c65))?;
    model.set_banks_frozen(true);
    Ok(model)
}

fn print_table(folds: &[FoldResult], summary: &FoldSummary) {
    println!("{:>4}  {:>10}  {:>8}", "fold", "loss", "accuracy");
    for f in folds {
        let loss = if f.loss.is_finite() { format!("{:.4}", f.loss) } else { "-".into() };
        println!("{:>4}  {:>10}  {:>8.3}", f.fold_index + 1, loss, f.accuracy);
    }
    println!("mean accuracy {:.3}  std {:.3} (population)", summary.mean, summary.std);
}

pub fn run(cli: &Cli, args: &KfoldArgs) -> CliResult<()> {
    if let Some(path) = &args.folds_from_file {
        let folds = read_folds_file(path)?;
        let summary = kfold_stats(&folds)?;
        print_table(&folds, &summary);
        if let Some(out) = &cli.out {
            prepare_out_dir(out, cli.force)?;
            let report = KfoldReport {
                schema_version: SCHEMA_VERSION,
                command: "kfold".into(),
                source: "file".into(),
                config: None,
                folds,
                summary,
            };
            write_json(&out.join("report.json"), &report)?;
        }
        return Ok(());
    }

    let mut cfg = base_config(cli)?;
    cfg.task = Task::Timeseries;
    if let Some(p) = args.preset {
        cfg.preset = p;
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = args.pretrain_epochs {
        cfg.pretrain_epochs = e;
    }
    cfg.validate()?;
    let dataset = cfg.dataset.clone().ok_or_else(|| CliError::Usage("kfold needs a dataset (--dataset DIR)".into()))?;
    let (a, b) = load_dataset(&dataset, Task::Timeseries)?;
    let pool = concat(&a, &b)?;
    let splits = stratified_kfold(&pool.labels, cfg.folds, cfg.seed)?;
    if let Some(out) = &cli.out {
        prepare_out_dir(out, cli.force)?;
    }

    let mut folds = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let seed = cfg.seed + i as u64;
        let train_data = pool.subset(&split.train)?;
        let test_data = pool.subset(&split.test)?;
        let fold_cfg = RunConfig { seed, ..cfg.clone() };
        let mut model = if cfg.preset.is_dynamic() {
            pretrained_dynamic(&fold_cfg, &train_data, &test_data, seed)?
        } else {
            let spec = fold_cfg.model_spec(train_data.sample_shape(), train_data.num_classes);
            build_model(&spec, &mut Prng::new(seed).derive(0x6d6f_6465))?
        };
        train(&mut model, &train_data, &test_data, &fold_cfg.train_config(None))?;
        let (loss, accuracy) = evaluate(&model, &test_data, cfg.batch_size)?;
        log::info!("fold {}: loss {loss:.4} accuracy {accuracy:.4}", i + 1);
        folds.push(FoldResult { fold_index: i, loss, accuracy });
    }
    let summary = kfold_stats(&folds)?;
    print_table(&folds, &summary);
    if let Some(out) = &cli.out {
        let report = KfoldReport {
            schema_version: SCHEMA_VERSION,
            command: "kfold".into(),
            source: "training".into(),
            config: Some(cfg.clone()),
            folds: folds.clone(),
            summary,
        };
        write_json(&out.join("report.json"), &report)?;
        let mut w = csv::Writer::from_path(out.join("folds.csv"))?;
        w.write_record(["fold", "loss", "accuracy"])?;
        for f in &folds {
            w.write_record([(f.fold_index + 1).to_string(), f.loss.to_string(), f.accuracy.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}
