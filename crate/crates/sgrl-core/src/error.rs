//! Crate-wide error types.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor / parameter dimension mismatch. The message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration (bad key, bad value, degenerate label set, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (files, edge lists, labels).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    /// A numeric or consistency check failed (gradcheck, non-finite loss).
    #[error("check failed: {0}")]
    Check(String),
}

/// Checkpoint decoding failures, each corrupt-file mode a distinct variant.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes (expected \"SGRL\")")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated tensor payload for \"{name}\"")]
    TruncatedTensor { name: String },

    #[error("tensor shapes inconsistent with checkpoint config: {0}")]
    ShapeInconsistency(String),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn check(msg: impl Into<String>) -> Self {
        Error::Check(msg.into())
    }
}
