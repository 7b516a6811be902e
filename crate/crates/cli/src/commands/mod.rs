pub mod eval;
pub mod flops;
pub mod gen_data;
pub mod gradcheck;
pub mod kfold;
pub mod train;

use dynconv::layers::Task;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::Cli;

/// Configuration from `--config` (or defaults) with the global seed and
/// output overrides applied.
pub(crate) fn base_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

pub(crate) fn metric_key(task: Task) -> &'static str {
    dynconv::train::metric_name(task)
}
