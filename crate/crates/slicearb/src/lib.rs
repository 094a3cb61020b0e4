//! File formats, experiment runner and command-line front end for
//! [`slicearb_core`].
//!
//! - [`config`]: TOML experiment files.
//! - [`trace`]: demand/CQI trace CSV.
//! - [`checkpoint`]: binary network parameters.
//! - [`runner`]: trains and evaluates every seed and writes the outputs.
//! - [`summary`]: `summary.json` and run comparison.
//! - [`metrics`]: CSV writers.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod summary;
pub mod trace;

pub use config::{ConfigError, ExperimentConfig, Overrides};
pub use runner::{run, RunError, RunOptions};
pub use summary::{compare, Comparison, RunSummary};
