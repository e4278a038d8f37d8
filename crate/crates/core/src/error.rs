use thiserror::Error;

/// Errors raised by the factorization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("invalid configuration for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure in {step}: {msg}")]
    Numeric { step: String, msg: String },

    #[error("exemplar selection error: {0}")]
    Selection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn numeric(step: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            step: step.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(row: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            row,
            col,
            msg: msg.into(),
        }
    }
}
