//! Orchestration for the dermtriage pipeline: the `dermtriage` command line
//! and its HTTP service.

pub mod annotations;
pub mod args;
pub mod commands;
pub mod models;
pub mod run;
pub mod service;

use dermtriage::Error;

/// Stable machine-readable name of an error's category.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Schema { .. } => "schema",
        Error::RejectedRecord { .. } => "rejected_record",
        Error::DuplicateImage(_) => "duplicate_image",
        Error::UnknownLabel(_) => "unknown_label",
        Error::InvalidRoi(_) => "invalid_roi",
        Error::EmptyIntersection => "empty_intersection",
        Error::Config(_) => "config",
        Error::InvalidInput(_) => "invalid_input",
        Error::UndefinedMetric { .. } => "undefined_metric",
        Error::Training(_) => "training",
        Error::ModelMismatch(_) => "model_mismatch",
        Error::Decode(_) => "decode",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Process exit status for an error: 2 for bad configuration or arguments,
/// 3 for bad input data, 4 for training/model failures, 5 for I/O.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::Schema { .. }
        | Error::RejectedRecord { .. }
        | Error::DuplicateImage(_)
        | Error::UnknownLabel(_)
        | Error::InvalidRoi(_)
        | Error::EmptyIntersection
        | Error::Decode(_)
        | Error::Json(_)
        | Error::Csv(_) => 3,
        Error::UndefinedMetric { .. } | Error::Training(_) | Error::ModelMismatch(_) => 4,
        Error::Io { .. } => 5,
    }
}
