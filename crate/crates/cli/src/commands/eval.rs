//! `eval`: metrics of a checkpoint on a dataset split.

use dynconv::data::load_dataset;
use dynconv::train::{evaluate, load_checkpoint};
use serde_json::json;

use super::metric_key;
use crate::error::{CliError, CliResult};
use crate::output::{prepare_out_dir, write_json, SCHEMA_VERSION};
use crate::{Cli, EvalArgs, Split};

pub fn run(cli: &Cli, args: &EvalArgs) -> CliResult<()> {
    let (model, manifest) = load_checkpoint(&args.checkpoint)?;
    let spec = &model.spec;
    if let Some(p) = args.preset {
        if p != spec.preset {
            return Err(CliError::Failure(format!(
                "checkpoint {} holds preset {} but preset {p} was requested",
                args.checkpoint.display(),
                spec.preset
            )));
        }
    }
    if let Some(t) = args.task {
        if t != spec.task {
            return Err(CliError::Failure(format!(
                "checkpoint {} was trained for task {} but task {t} was requested",
                args.checkpoint.display(),
                spec.task
            )));
        }
    }
    let (train, test) = load_dataset(&args.dataset, spec.task)?;
    let data = match args.split {
        Split::Train => train,
        Split::Test => test,
    };
    if data.sample_shape() != spec.input_shape.as_slice() {
        return Err(CliError::Failure(format!(
            "dataset samples {:?} do not match the checkpoint's input shape {:?}",
            data.sample_shape(),
            spec.input_shape
        )));
    }
    let (loss, metric) = evaluate(&model, &data, 64)?;
    let key = metric_key(spec.task);
    let mut result = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "eval",
        "preset": spec.preset,
        "task": spec.task,
        "checkpoint_epoch": manifest.epoch,
        "split": match args.split { Split::Train => "train", Split::Test => "test" },
        "samples": data.len(),
        "loss": loss,
    });
    result[key] = json!(metric);
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(out) = &cli.out {
        prepare_out_dir(out, cli.force)?;
        write_json(&out.join("eval.json"), &result)?;
    }
    Ok(())
}
