//! Experiment configs, metrics, sweeps, scaling checks and result files.
//!
//! Throughput is reported in decisions per minute (TPM) using the configured
//! slot length, 1 s by default. Absolute seconds are a simulation artifact.

mod config;
mod export;
mod metrics;
mod runner;
mod scaling;

pub use config::{AdversarySpec, ExperimentConfig, PointSpec, ScalingSpec, Topology};
pub use export::{
    config_hash, plot_data, read_results, replay, write_results, OutputFormat, ReplayOutcome,
    ResultsFile, CODE_VERSION,
};
pub use metrics::{summarize, Summary, MetricsRecord};
pub use runner::{run_matrix, run_point, trial_seed};
pub use scaling::{scaling_check, ScalingPoint, ScalingReport};
