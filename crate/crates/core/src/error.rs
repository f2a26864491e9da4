use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("invalid frame rate {0} (must be > 0)")]
    InvalidFrameRate(f64),

    #[error("label {class:?} for task {task:?} is not in the task vocabulary")]
    UnknownLabel { task: String, class: String },

    #[error("frame access failed for video {video_id}: {reason}")]
    Frame { video_id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("not enough patients: need at least {needed}, found {found}")]
    InsufficientPatients { needed: usize, found: usize },

    #[error("missing labels for task {0}")]
    MissingLabels(String),

    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes and diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Image(_) | Error::Frame { .. } => "io",
            Error::Manifest(_)
            | Error::InvalidFrameRate(_)
            | Error::UnknownLabel { .. }
            | Error::Json(_)
            | Error::Csv(_) => "input",
            Error::InvalidArgument(_)
            | Error::OutOfRange(_)
            | Error::Empty(_)
            | Error::InsufficientPatients { .. }
            | Error::MissingLabels(_)
            | Error::UnbalancedDesign(_) => "usage",
            Error::NonFiniteLoss { .. } | Error::Tensor(_) => "training",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}
