//! Error type shared across the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty graph after filtering")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("link split failed: {0}")]
    Split(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Exit-code category used by the CLI: 2 config/domain, 3 I/O and
    /// input data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Numeric(_) | Error::UndefinedSimilarity(_) => 4,
            _ => 3,
        }
    }
}
