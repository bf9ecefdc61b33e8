use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Mismatched array shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A model evaluation produced a non-finite value.
    #[error("non-finite value in parameter span `{span}`")]
    NonFinite { span: String },

    /// Sampling failed beyond recovery.
    #[error("fit error: {message}")]
    Fit { message: String },

    /// Malformed input data.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn fit(msg: impl Into<String>) -> Self {
        Error::Fit {
            message: msg.into(),
        }
    }
}
