//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension disagreement between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input failed a domain precondition (range, emptiness, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Required per-category data is missing; lists the offenders.
    #[error("missing data for categories: {}", .0.join(", "))]
    MissingCategories(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
