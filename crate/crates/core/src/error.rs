use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("Cholesky factorization failed even with jitter {jitter:e}")]
    FactorizationFailure { jitter: f64 },

    #[error("model has no training data")]
    EmptyModel,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("objective returned a non-finite value at evaluation {evaluation}")]
    ObjectiveReturnedNaN { evaluation: usize },

    #[error("archive is empty")]
    EmptyArchive,

    #[error("adaptation already stopped ({0})")]
    AlreadyStopped(String),

    #[error("no transitions to learn from")]
    EmptyData,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path}: {message}")]
    Parse { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFiniteInput(what.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Configuration and I/O failures, as opposed to failures of the run itself.
    pub fn is_config_or_io(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::Parse { .. } | Error::Io { .. })
    }
}

/// A sequential run that stopped early, carrying whatever it produced before
/// the failure. The partial result is flagged invalid.
#[derive(Debug)]
pub struct RunAborted<T> {
    pub error: Error,
    pub partial: T,
}

impl<T: fmt::Debug> fmt::Display for RunAborted<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted: {}", self.error)
    }
}

impl<T: fmt::Debug> std::error::Error for RunAborted<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(what))
    }
}

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
