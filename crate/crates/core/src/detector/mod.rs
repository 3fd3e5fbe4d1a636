mod features;
mod grid;
mod nms;
mod types;

use std::path::Path;

pub use features::{CellGrid, FEATURE_DIM, STRIDE};
pub use grid::{
    train_detector, DetectorMeta, DetectorModel, StepRecord, ANCHOR_SIZE, BACKEND_NAME, MODEL_FILE, TRAINING_LOG_FILE,
    WEIGHTS_FILE,
};
pub use nms::nms;
pub use types::{Detection, DetectorTrainConfig, Granularity, GranularityConfig};

use crate::data::Pixels;
use crate::error::{Error, Result};
use crate::io_util::{from_json_lines, to_json_lines};

/// A frozen detector. Implementations must be pure: the same image always
/// yields the same detections.
pub trait DetectorBackend: Send + Sync {
    fn granularity(&self) -> Granularity;

    /// NMS-suppressed detections with `score >= score_threshold`, sorted by
    /// descending score.
    fn detect(&self, image_id: &str, image: &Pixels) -> Result<Vec<Detection>>;

    /// One fixed-length representation per detection, which must have been
    /// produced by this model on `image`.
    fn export_features(&self, image: &Pixels, detections: &[Detection]) -> Result<Vec<Vec<f32>>>;
}

/// Decodes an encoded image and runs `detect` on it.
pub fn detect_bytes<D: DetectorBackend + ?Sized>(model: &D, image_id: &str, bytes: &[u8]) -> Result<Vec<Detection>> {
    model.detect(image_id, &Pixels::decode(bytes)?)
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    std::fs::write(path, to_json_lines(detections)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_json_lines(&text)
}
