use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument violated its domain (non-finite, wrong length, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dataset, split, or experiment parameters are inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A pool or teacher operation was called out of order or with foreign ids.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The query size exceeds what the unlabeled pool can supply.
    #[error("budget error: requested {requested} samples but only {available} are unlabeled")]
    Budget { requested: usize, available: usize },

    #[error("teacher has no prediction for sample {0}")]
    Lookup(usize),

    #[error("{path}: row {row}: {message}")]
    Ingestion { path: PathBuf, row: usize, message: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("round {round}: {source}")]
    Run {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    /// One entry per violated constraint; never empty.
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("export failed, missing cell files: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
