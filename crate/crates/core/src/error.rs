//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller handed an operation arguments that violate its precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A register or enumeration would exceed the configured size cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// A stored quantum state no longer satisfies its invariants.
    #[error("state corruption: {0}")]
    StateCorruption(String),
    /// A measurement branch with probability below the floor was requested.
    #[error("zero-probability branch: {0}")]
    ZeroProbabilityBranch(String),
    /// A dataset or container file failed to parse.
    #[error("format error: {0}")]
    Format(String),
    /// An experiment or model configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        CoreError::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
