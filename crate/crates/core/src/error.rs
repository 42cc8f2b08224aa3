use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("bad data at index {index}: {message}")]
    Data { index: usize, message: String },

    #[error("{path}: line {line}: {message}")]
    Input {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("Riccati solver did not converge (residual norm {residual:e})")]
    SolverFailure { residual: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("objective is not finite at {at}")]
    NonFinite { at: f64 },

    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
