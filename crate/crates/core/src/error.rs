//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset handling, tensor kernels, training and
/// evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// A triple file line did not split into exactly three non-empty fields.
    #[error("{file}:{line}: malformed triple line (expected 3 tab-separated fields): {reason}")]
    Parse {
        file: PathBuf,
        line: usize,
        reason: String,
    },

    /// The dataset cannot be used for training.
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// Tensor or matrix dimensions do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An operation was applied to a value in the wrong state
    /// (e.g. augmenting an already-augmented graph).
    #[error("invalid state: {0}")]
    State(String),

    /// A caller-supplied argument is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value violates its documented range.
    #[error("invalid config: {0}")]
    Config(String),

    /// An id referenced a vocabulary entry that does not exist.
    #[error("{kind} id {id} out of range (vocabulary size {len})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        len: usize,
    },

    /// A checkpoint file could not be read or failed validation.
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
