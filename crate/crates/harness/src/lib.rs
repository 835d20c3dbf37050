//! Monte-Carlo experiment harness for the sequential classifier two-sample
//! test and its baselines.
//!
//! An experiment is a [`config::ExperimentConfig`] plus a kind. Running it
//! yields an [`experiments::ExperimentOutput`] (rejection curves, per-run
//! records and a few summary numbers), which [`report::write_reports`] turns
//! into files. Every replication is seeded from the master seed and its own
//! index, so results do not depend on the number of worker threads.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use experiments::{run_experiment, ExperimentOutput, RejectionCurve, RunRecord};

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] ec2st::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed report: {0}")]
    Report(String),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Core(ec2st::Error::Usage(_)) => "usage",
            HarnessError::Core(ec2st::Error::Training { .. }) => "training",
            HarnessError::Core(ec2st::Error::NullFitNotConverged { .. }) => "null_fit",
            HarnessError::Core(ec2st::Error::Schema(_) | ec2st::Error::Parse { .. }) => "data",
            HarnessError::Core(_) => "core",
            HarnessError::Io(_) => "io",
            HarnessError::Json(_) => "json",
            HarnessError::Report(_) => "report",
        }
    }
}
