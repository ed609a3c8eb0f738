use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PlmError>;

#[derive(Debug, Error)]
pub enum PlmError {
    /// Invalid configuration: mismatched lists, rates out of domain, bad schedules.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values in outputs, losses or gradients.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// A training loop produced non-finite parameters or losses.
    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: u64, reason: String },
}

impl PlmError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        PlmError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        PlmError::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        PlmError::Format(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        PlmError::Range(msg.into())
    }
}
