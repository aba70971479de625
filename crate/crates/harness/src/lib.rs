//! Seeded experiment runner for the robust compositional solvers: TOML
//! configs, multi-trial runs, checkpoint traces and error-bar aggregates.

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod selftest;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_trials, ExperimentReport, TrialOutcome, TrialResult};
