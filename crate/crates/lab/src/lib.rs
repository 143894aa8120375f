//! Experiment harness: configuration, data preparation, the experiment
//! commands and their reports.

pub mod config;
pub mod data;
pub mod experiments;
pub mod report;

pub use config::{AttackKind, ExperimentConfig, ModelKind, Precision};
pub use experiments::{run_command, Command};
pub use report::{CellSummary, Report, RunRecord};
