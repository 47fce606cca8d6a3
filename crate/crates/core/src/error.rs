use thiserror::Error;

/// Errors produced by the optimization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("simulator error: {message}")]
    Simulator { message: String, payload: String },

    #[error("candidate grid exhausted: every candidate has been evaluated")]
    Exhausted,

    #[error("grid of {size} points exceeds the sampling cap of {cap}")]
    GridTooLarge { size: usize, cap: usize },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn simulator(msg: impl Into<String>, payload: impl Into<String>) -> Self {
        Error::Simulator {
            message: msg.into(),
            payload: payload.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
