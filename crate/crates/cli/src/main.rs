use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use protonfem_cli::{
    adapt_scenario, convergence_study, dose_scenario, load_scenario, run_scenario, RunnerError,
};

/// Deterministic proton-transport runs over space-energy meshes.
#[derive(Parser)]
#[command(name = "protonfem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and emit fluence, dose and summary artifacts.
    Run(ScenarioArgs),
    /// Uniform-refinement convergence study against the analytic reference.
    Converge {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of uniform levels.
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Adaptive solve-estimate-mark-refine loop.
    Adapt(ScenarioArgs),
    /// Solve once and emit every configured dose projection.
    Dose(ScenarioArgs),
    /// List built-in presets.
    Presets,
}

fn dispatch(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Run(args) => {
            let config = load_scenario(args.preset.as_deref(), args.config.as_deref())?;
            let summary = run_scenario(config, &args.out)?;
            println!(
                "{}: {} dofs, fluence [{:.6e}, {:.6e}], {} file(s) in {}",
                summary.scenario,
                summary.dofs,
                summary.fluence_min,
                summary.fluence_max,
                summary.manifest.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Converge { scenario, levels } => {
            let config = load_scenario(scenario.preset.as_deref(), scenario.config.as_deref())?;
            let (rows, _) = convergence_study(config, levels, &scenario.out)?;
            println!("level,dofs,h,energy_error,l2_error,slope");
            for r in &rows {
                println!(
                    "{},{},{:.6e},{:.6e},{:.6e},{}",
                    r.level,
                    r.dofs,
                    r.h,
                    r.energy_error,
                    r.l2_error,
                    r.slope.map(|s| format!("{s:.3}")).unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::Adapt(args) => {
            let config = load_scenario(args.preset.as_deref(), args.config.as_deref())?;
            let (report, summary) = adapt_scenario(config, &args.out)?;
            println!("level,dofs,marked,eta_sum,energy_error");
            for row in &report.levels {
                println!(
                    "{},{},{},{:.6e},{}",
                    row.level,
                    row.dofs,
                    row.marked,
                    row.eta_total,
                    row.energy_error
                        .map(|e| format!("{e:.6e}"))
                        .unwrap_or_default()
                );
            }
            println!(
                "final: {} dofs, fluence [{:.6e}, {:.6e}]",
                summary.dofs, summary.fluence_min, summary.fluence_max
            );
            Ok(())
        }
        Command::Dose(args) => {
            let config = load_scenario(args.preset.as_deref(), args.config.as_deref())?;
            let summary = dose_scenario(config, &args.out)?;
            for (label, lo, hi) in &summary.dose_ranges {
                println!("dose {label}: min {lo:.6e} max {hi:.6e}");
            }
            Ok(())
        }
        Command::Presets => {
            for name in protonfem_cli::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ RunnerError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ RunnerError::Solver(_)) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
