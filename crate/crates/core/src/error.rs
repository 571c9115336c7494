use thiserror::Error;

/// Errors raised by the statistical models and samplers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("inference error: {0}")]
    Inference(String),
}

impl ModelError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        ModelError::Domain(msg.into())
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
