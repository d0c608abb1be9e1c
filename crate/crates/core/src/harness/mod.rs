//! Experiment harness: TOML configs, experiment construction, CSV/JSON
//! output and the command-line front end.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;

pub use config::ExperimentConfig;
pub use experiment::{build_experiment, run_experiment, Experiment, RunOutput, Sidecar, TheoryReport};
