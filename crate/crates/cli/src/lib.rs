//! Command-line front end: dataset generation, training, evaluation,
//! k-fold experiments, gradient checks and FLOP reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynconv::layers::{Preset, Task};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).map_err(|e| e.to_string())
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "dynconv", version, about = "Dynamic convolution toolkit")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed overriding the configuration's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a model and write report, curves, attention dumps and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Stratified k-fold training on a time-series dataset.
    Kfold(KfoldArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// Per-layer FLOP breakdown and variant comparison.
    Flops(FlopsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    OrientedBars,
    ShapesSeg,
    SynthTimeseries,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    pub kind: DataKind,
    /// Orientation classes (bars) or waveform classes (series).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Training samples per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Test samples per class.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Training images (shapes).
    #[arg(long)]
    pub count: Option<usize>,
    /// Test images (shapes).
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Image side length.
    #[arg(long)]
    pub size: Option<usize>,
    /// Series length.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Rotate the bar test split by 90 degrees (labels follow the rotation).
    #[arg(long)]
    pub rotated_test: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Record wall-clock time in the report (makes reports differ between runs).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Expected task; must match the checkpoint.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Expected preset; must match the checkpoint.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct KfoldArgs {
    /// Summarize fold accuracies listed in a file instead of training.
    #[arg(long)]
    pub folds_from_file: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Preset to check; all presets when omitted.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Check every entry instead of a random sample per parameter.
    #[arg(long)]
    pub all_entries: bool,
    #[arg(long, default_value_t = dynconv::layers::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = dynconv::layers::gradcheck::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Perturb the analytic gradient of one parameter (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    TwoLayer,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Preset to report; the five image variants when omitted.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Comma-separated input shape, `C,H,W` or `C,L`.
    #[arg(long)]
    pub input_shape: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Report a built-in hand-countable network instead.
    #[arg(long, value_enum)]
    pub fixture: Option<Fixture>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data::run(&cli, a),
        Command::Train(a) => commands::train::run(&cli, a),
        Command::Eval(a) => commands::eval::run(&cli, a),
        Command::Kfold(a) => commands::kfold::run(&cli, a),
        Command::Gradcheck(a) => commands::gradcheck::run(&cli, a),
        Command::Flops(a) => commands::flops::run(&cli, a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// reporting errors on stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
