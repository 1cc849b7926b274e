//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by corpus handling, featurization, the model, and search.
#[derive(Debug, Error)]
pub enum FocError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, FocError>;

impl FocError {
    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        FocError::Parse(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FocError::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FocError::InvalidInput(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        FocError::Model(msg.into())
    }
}
