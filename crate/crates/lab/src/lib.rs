//! Twin-experiment harness on top of `etkf-core`: JSON run configuration,
//! parallel Monte Carlo replication, Monte Carlo checks of the error bounds,
//! CSV export and the `etkf-lab` command line.

pub mod checks;
pub mod config;
pub mod export;
pub mod montecarlo;
pub mod resolve;
pub mod scaling;

pub use config::RunConfig;
pub use montecarlo::{run_monte_carlo, MonteCarloSummary};
pub use resolve::ResolvedConstants;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] etkf_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("configuration does not meet the check's assumptions: {0}")]
    ConfigMismatch(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{count} replicate(s) failed; first: replicate {replicate} at step {step}: {error}")]
    ReplicateFailures { count: usize, replicate: u64, step: usize, error: etkf_core::Error },
}
