//! `flops`: per-layer FLOP breakdown and a comparison across presets.

use dynconv::layers::{build_model, Preset, Task};
use dynconv::metrics::{flops_model, two_layer_fixture, CostCategory, FlopReport};
use dynconv::Prng;
use serde::{Deserialize, Serialize};

use super::base_config;
use crate::error::{CliError, CliResult};
use crate::output::{write_json, SCHEMA_VERSION};
use crate::{Cli, FlopsArgs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetFlops {
    pub preset: Preset,
    pub params: usize,
    pub report: FlopReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsOutput {
    pub schema_version: u32,
    pub fixture: Option<String>,
    pub task: Task,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub presets: Vec<PresetFlops>,
    pub fixture_report: Option<FlopReport>,
}

fn parse_shape(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad --input-shape component {p:?}"))))
        .collect()
}

fn print_layers(report: &FlopReport) {
    for l in &report.layers {
        println!("  {:<36} {:<20} {:>14}", l.name, l.category.name(), l.flops);
    }
    println!("  {:<36} {:<20} {:>14}", "total", "", report.total);
}

pub fn run(cli: &Cli, args: &FlopsArgs) -> CliResult<()> {
    if let Some(_fixture) = args.fixture {
        let report = two_layer_fixture();
        println!("two-layer fixture");
        print_layers(&report);
        let out = FlopsOutput {
            schema_version: SCHEMA_VERSION,
            fixture: Some("two-layer".into()),
            task: Task::Classify,
            input_shape: vec![1, 8, 8],
            num_classes: 10,
            presets: Vec::new(),
            fixture_report: Some(report),
        };
        if let Some(path) = &args.json {
            write_json(path, &out)?;
        }
        return Ok(());
    }
    let cfg = base_config(cli)?;
    let task = args.task.unwrap_or(match args.preset {
        Some(Preset::Net1Dcnn | Preset::Net2Dcnn) => Task::Timeseries,
        _ => Task::Classify,
    });
    let input_shape = match &args.input_shape {
        Some(s) => parse_shape(s)?,
        None if task == Task::Timeseries => vec![1, 128],
        None => vec![1, 16, 16],
    };
    let presets: Vec<Preset> = match (args.preset, task) {
        (Some(p), _) => vec![p],
        (None, Task::Timeseries) => vec![Preset::BaseCnn, Preset::Net1Dcnn, Preset::Net2Dcnn],
        (None, _) => Preset::IMAGE_VARIANTS.to_vec(),
    };
    let mut rows = Vec::new();
    for preset in presets {
        let spec = crate::RunConfig { preset, task, ..cfg.clone() }.model_spec(&input_shape, args.classes);
        let model = build_model(&spec, &mut Prng::new(cfg.seed))?;
        let report = flops_model(&model);
        println!("{preset} ({task}, input {input_shape:?})");
        print_layers(&report);
        rows.push(PresetFlops { preset, params: model.params.count(), report });
    }
    println!();
    println!(
        "{:<16} {:>14} {:>14} {:>14} {:>14} {:>14} {:>10}",
        "preset", "total", "convolution", "attention", "dense", "other", "params"
    );
    for r in &rows {
        println!(
            "{:<16} {:>14} {:>14} {:>14} {:>14} {:>14} {:>10}",
            r.preset.name(),
            r.report.total,
            r.report.category(CostCategory::Convolution),
            r.report.category(CostCategory::AttentionGenerator),
            r.report.category(CostCategory::Dense),
            r.report.category(CostCategory::Other),
            r.params
        );
    }
    let output = FlopsOutput {
        schema_version: SCHEMA_VERSION,
        fixture: None,
        task,
        input_shape,
        num_classes: args.classes,
        presets: rows,
        fixture_report: None,
    };
    if let Some(path) = &args.json {
        write_json(path, &output)?;
    }
    Ok(())
}
