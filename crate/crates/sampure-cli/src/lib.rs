//! Experiment front end for the purification toolkit: config-driven runs for
//! score training, classifier training, purification, attacks, robustness
//! evaluation, theory verification, and landscape-grid emission.

pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod runner;

pub use config::{reference_config, ExperimentConfig, Kind};
pub use runner::{run_config, run_config_file, RunError, RunOptions, RunSummary};
