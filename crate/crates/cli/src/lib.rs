//! Scenario-driven runner: TOML configs or built-in presets are lowered
//! onto the transport engine, solved, and written out as CSV artifacts.

// validations use `!(x > 0.0)` so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;

pub use config::{material_preset, preset, preset_names, ScenarioConfig};
pub use runner::{
    adapt_scenario, convergence_study, dose_scenario, run_scenario, ConvergenceRow, RunSummary,
    RunnerError, Scenario,
};

use std::path::Path;

/// Load a scenario from `--preset` or `--config`.
pub fn load_scenario(
    preset_name: Option<&str>,
    config_path: Option<&Path>,
) -> Result<ScenarioConfig, RunnerError> {
    match (preset_name, config_path) {
        (Some(name), None) => preset(name).ok_or_else(|| {
            RunnerError::Config(vec![format!(
                "unknown preset '{name}'; available: {}",
                preset_names().join(", ")
            )])
        }),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(RunnerError::Io)?;
            ScenarioConfig::from_toml(&text).map_err(|e| RunnerError::Config(vec![e]))
        }
        (Some(_), Some(_)) => Err(RunnerError::Config(vec![
            "--preset and --config are mutually exclusive".into(),
        ])),
        (None, None) => Err(RunnerError::Config(vec![
            "one of --preset or --config is required".into(),
        ])),
    }
}
