//! Experiment harness for `grip-core`: run configuration, dataset and
//! checkpoint files, metric CSVs, multi-seed experiments and the `grip`
//! command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
