//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric routine failed to bracket or converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The problem has no interior solution (e.g. a label fraction of 0 or 1).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The ordering assumption between reference points and the threshold is violated.
    #[error("ordering violated: {0}")]
    Ordering(String),

    /// A configuration value failed validation. `key` names the offending entry.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },

    /// An input file does not carry a required column.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A truncated variance larger than any Gaussian truncated to the window can produce.
    #[error("infeasible truncated variance {s2} (supremum {limit})")]
    Infeasible { s2: f64, limit: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Schema(e.to_string()),
        }
    }
}
