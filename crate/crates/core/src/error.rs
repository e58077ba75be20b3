use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },

    #[error("expected {expected} channel(s), got {actual}")]
    ChannelCount { expected: String, actual: usize },

    #[error("image {height}x{width} is too small: {reason}")]
    TooSmall {
        height: usize,
        width: usize,
        reason: String,
    },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("build error: {0}")]
    Build(String),

    #[error("checkpoint fingerprint mismatch: archive has {stored}, config gives {computed}")]
    Fingerprint { stored: String, computed: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("sample {id}: {reason}")]
    Sample { id: String, reason: String },

    #[error("feature extractor `{extractor}` failed: {reason}")]
    Extractor { extractor: String, reason: String },

    #[error("pose estimator failed: {0}")]
    Estimator(String),

    #[error("malformed keypoint JSON at byte {offset}: {message}")]
    KeypointParse { offset: usize, message: String },

    #[error("undefined ratio: {0}")]
    Undefined(String),

    #[error("non-finite loss at step {step} ({detail})")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::ShapeMismatch { .. }
                | Error::ChannelCount { .. }
                | Error::TooSmall { .. }
                | Error::Build(_)
                | Error::Fingerprint { .. }
        )
    }
}
