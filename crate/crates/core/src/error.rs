use thiserror::Error;

/// Errors raised by the privacy mechanisms and the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate scenario: {0}")]
    DegenerateScenario(String),

    #[error("entropy undefined: no visits over the location set")]
    UndefinedEntropy,

    #[error("inconsistent observations: cloaks share no common point")]
    InconsistentObservations,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
