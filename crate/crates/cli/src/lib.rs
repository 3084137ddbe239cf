//! Configuration loading, sweep orchestration, trace files and reports
//! for the `clockforge` command.

pub mod config;
pub mod experiment;
pub mod reports;
pub mod trace_io;
pub mod valuations;

pub use config::{load_config, ConfigError, ExperimentConfig, SchemeSpec, Violation};
pub use experiment::{run_experiment, run_single, RunOptions, RunReport, Summary};
