//! Command-line front end for IVPP pretraining experiments.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{EvalMode, ExperimentConfig, Profile, RunCondition, SweepPlan};
pub use error::{CliError, Result};
