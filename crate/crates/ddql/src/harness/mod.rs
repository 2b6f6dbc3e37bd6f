//! Experiment orchestration: config files, seeded multi-run sweeps, CSV
//! metrics, comparison tables, and chart output.
//!
//! The whole pipeline is a pure function of (config, seeds): every random
//! draw comes from a named stream of the per-run master seed, CSV floats are
//! printed with 17 significant digits, and charts are plain SVG text. The
//! only column that varies between reruns is wallclock_seconds.

pub mod compare;
pub mod config;
pub mod oracle;
pub mod run;
mod svg;

pub use compare::{compare, CompareReport, Metric};
pub use config::{EvalSettings, ExperimentConfig};
pub use oracle::{oracle_tables, OracleReport};
pub use run::{
    parse_metrics_csv, run_experiment, strip_wallclock, ExperimentOutcome, MetricsRow, RunOutcome,
    CSV_HEADER,
};

use crate::agents::AgentError;
use crate::envs::EnvError;
use crate::eval::EvalError;
use crate::nn::NnError;
use crate::replay::ReplayError;
use crate::tabular::TabularError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("experiment grids do not match: {0}")]
    GridMismatch(String),
    #[error("{0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

/// Root directory for all artifacts. `DDQL_OUTPUT_ROOT` overrides the
/// current directory; per-experiment paths hang off it.
pub fn output_root() -> PathBuf {
    match std::env::var_os("DDQL_OUTPUT_ROOT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("."),
    }
}

/// Bundled presets: the desk recipe and the full-scale schedule. Data, not
/// code; `train desk` works out of the box.
pub const PRESET_DESK: &str = include_str!("../../presets/desk.cfg");
pub const PRESET_PAPER_FULLSCALE: &str = include_str!("../../presets/paper-fullscale.cfg");

/// Resolves a CLI config argument: a known preset name, else a file path.
/// Returns (label, text).
pub fn load_config_source(arg: &str) -> Result<(String, String), HarnessError> {
    match arg {
        "desk" => Ok(("preset:desk".into(), PRESET_DESK.into())),
        "paper-fullscale" => Ok(("preset:paper-fullscale".into(), PRESET_PAPER_FULLSCALE.into())),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HarnessError::NotFound(format!("config {path:?} is not a preset or readable file: {e}"))
            })?;
            Ok((path.to_string(), text))
        }
    }
}
