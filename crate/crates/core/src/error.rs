use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: schema error at line {line}, column {column}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("record {image_id}: {reason}")]
    RejectedRecord { image_id: String, reason: String },

    #[error("duplicate image_id {0:?} in manifest")]
    DuplicateImage(String),

    #[error("unknown lesion class {0:?}")]
    UnknownLabel(String),

    #[error("invalid ROI: {0}")]
    InvalidRoi(String),

    #[error("ROI does not intersect the image")]
    EmptyIntersection,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{metric} is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("training data error: {0}")]
    Training(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
