//! Two-stage skin lesion triage: lesion detection, ROI malignancy
//! classification, image-level aggregation, clinical covariate fusion and the
//! evaluation metrics used to compare them.

pub mod classifier;
pub mod clinical;
pub mod data;
pub mod detector;
pub mod error;
pub mod io_util;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
