use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A density was evaluated outside its support.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// An iterative null-model fit did not reach the required tolerance; using
    /// it as a denominator would inflate the e-value.
    #[error("null MLE did not converge (gradient norm {gradient_norm:e} after {iterations} iterations)")]
    NullFitNotConverged { iterations: usize, gradient_norm: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
