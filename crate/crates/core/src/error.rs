use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration. `path` names the offending field.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A numeric parameter outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("unknown {kind} index {index} (valid range 0..{len})")]
    Lookup {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cache {cache} exceeds its capacity: uses {used} of {budget} capacity units")]
    Capacity {
        cache: usize,
        used: u128,
        budget: u128,
    },

    #[error("placement shape mismatch: {0}")]
    Shape(String),

    #[error("brute-force oracle limited to {limit} binary variables, got {requested}")]
    OracleScope { limit: usize, requested: usize },

    #[error("scheduling error: {0}")]
    Scheduling(String),

    #[error("no equilibrium after {steps} scheduled best responses")]
    NonConvergence { steps: u64 },

    #[error("trace verification failed at record {record}: {message}")]
    Trace { record: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
