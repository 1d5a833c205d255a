use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    /// Conjugate gradient hit a direction with zero curvature. `last` is the
    /// iterate reached before the breakdown.
    #[error("conjugate gradient breakdown after {iterations} iterations")]
    Breakdown { iterations: usize, last: Vec<num_complex::Complex64> },

    /// A message-passing iteration produced a non-finite value.
    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("NMSE is undefined for an all-zero reference channel")]
    UndefinedNmse,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
