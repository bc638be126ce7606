//! Scenario files, experiment sweeps, CSV output and the command surface of
//! the paid-prioritization market simulator.

pub mod commands;
pub mod rows;
pub mod scenario;
pub mod sweep;

pub use commands::{CliError, RunOptions};
pub use rows::{emit_csv, format_sig, rows_to_csv, ResultRow};
pub use scenario::{load_scenario, Scenario, ScenarioError};
