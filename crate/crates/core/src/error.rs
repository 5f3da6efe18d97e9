use thiserror::Error;

use crate::numeric::LpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input box: {0}")]
    EmptyBox(String),

    #[error("tie between outputs {0} and {1} at the reference point")]
    Tie(usize, usize),

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error("malformed event log: {0}")]
    EventLog(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0} ReLUs exceeds the brute-force guard of {1}")]
    OracleGuard(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
