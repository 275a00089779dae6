//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by loaders, numerical routines and the sampler.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content. `line` is the 1-based line number in the file
    /// (the header is line 1).
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Structurally valid input that violates a data invariant.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Covariance matrix could not be factorized even at the maximum jitter.
    #[error("matrix not positive definite (max jitter {max_jitter:e} exhausted)")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("model specification error: {0}")]
    ModelSpec(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("mcmc error: {0}")]
    Mcmc(String),

    #[error("unknown parameter selector: {0}")]
    UnknownParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
