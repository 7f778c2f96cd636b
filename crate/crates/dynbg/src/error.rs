//! Crate-wide error type and the exit-code mapping used by the CLI.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to encode image {path}: {source}")]
    ImageEncode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset layout error in {dir}: {reason}")]
    DatasetLayout { dir: PathBuf, reason: String },

    #[error("ground-truth pixel value {value} in {context} is not a CDnet label (0, 50, 85, 170, 255)")]
    GroundTruthValue { context: String, value: u8 },

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("checkpoint error in {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error: {reason}")]
    Config { reason: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI. Dataset and input problems exit 2, checkpoint
    /// and shape mismatches exit 3, numeric failures exit 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::ImageDecode { .. }
            | Error::ImageEncode { .. }
            | Error::DatasetLayout { .. }
            | Error::GroundTruthValue { .. }
            | Error::Config { .. } => 2,
            Error::ShapeMismatch { .. } | Error::Checkpoint { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
        }
    }

    /// Shorthand for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
