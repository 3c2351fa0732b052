use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("no path between {from} and {to}")]
    NoPath { from: String, to: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// No experiences were supplied to the attention layer.
    #[error("empty experience set")]
    EmptyExperience,

    #[error("backend error: {0}")]
    Backend(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
