//! Output directory handling and the CSV/JSON files commands write.

use std::fs;
use std::path::{Path, PathBuf};

use dynconv::layers::AttentionRecord;
use dynconv::train::EpochRecord;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Creates `dir`, refusing to reuse a non-empty directory unless forced.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Failure(format!("{} exists and is not a directory", dir.display())));
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            return Err(CliError::Failure(format!("{} is not empty; pass --force to write into it", dir.display())));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn require_out(out: &Option<PathBuf>, fallback: &Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    out.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("{command} needs an output directory (--out DIR)")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_curves(path: &Path, epochs: &[EpochRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_metric", "lr"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
            e.val_metric.to_string(),
            e.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format attention dump: one row per (sample, layer, weight index).
pub fn write_attention(path: &Path, records: &[AttentionRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample", "layer", "kind", "index", "weight"])?;
    for r in records {
        let (n, k) = (r.weights.dim(0), r.weights.dim(1));
        for s in 0..n {
            for i in 0..k {
                w.write_record([
                    s.to_string(),
                    r.layer.clone(),
                    r.kind.name().to_string(),
                    i.to_string(),
                    r.weights.data()[s * k + i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
