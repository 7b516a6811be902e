//! `gradcheck`: finite-difference verification of every parameter gradient.

use dynconv::layers::gradcheck::{gradcheck_fixture, gradcheck_model, model_gradients, GradcheckConfig, GradcheckReport};
use dynconv::layers::{Preset, Targets};

use crate::error::{CliError, CliResult};
use crate::{Cli, GradcheckArgs};

pub fn check_preset(preset: Preset, cfg: &GradcheckConfig, corrupt: Option<&str>) -> CliResult<GradcheckReport> {
    let (mut model, x, labels) = gradcheck_fixture(preset, cfg.seed)?;
    let mut grads = model_gradients(&model, &x, Targets::Classes(&labels))?;
    if let Some(name) = corrupt {
        if let Some(id) = model.params.find(name) {
            grads.get_mut(id).data_mut().iter_mut().for_each(|g| *g = *g * 1.5 + 0.01);
        }
    }
    Ok(gradcheck_model(&mut model, &x, Targets::Classes(&labels), cfg, &grads)?)
}

pub fn run(cli: &Cli, args: &GradcheckArgs) -> CliResult<()> {
    let cfg = GradcheckConfig {
        epsilon: args.epsilon,
        tolerance: args.tolerance,
        samples: if args.all_entries { None } else { GradcheckConfig::default().samples },
        seed: cli.seed.unwrap_or(0),
    };
    let presets: Vec<Preset> = match args.preset {
        Some(p) => vec![p],
        None => Preset::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for preset in presets {
        let report = check_preset(preset, &cfg, args.corrupt.as_deref())?;
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("{preset}: {verdict} (worst relative error {:.3e}, tolerance {:.0e})", report.worst(), cfg.tolerance);
        for g in &report.groups {
            println!(
                "  {:<40} {:>5} entries  worst {:.3e}  {}",
                g.name,
                g.checked,
                g.rel_error,
                if g.passed { "ok" } else { "FAIL" }
            );
        }
        for g in report.failures() {
            println!(
                "  failure: {preset} parameter {} entry {}: analytic {:.10e} vs numeric {:.10e}",
                g.name, g.worst_index, g.analytic, g.numeric
            );
            failed.push(format!("{preset}/{}", g.name));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("gradient check failed for {}", failed.join(", "))))
    }
}
