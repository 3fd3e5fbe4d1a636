//! Dataset schema, lesion taxonomy, annotation ingestion and ROI crops.

mod crop;
mod isic;
mod label;
mod manifest;
mod pixels;
mod roi;
mod split;

pub use crop::{extract_crop, DEFAULT_CROP_SIDE};
pub use isic::{full_frame_roi, ingest_isic};
pub use label::LesionLabel;
pub use manifest::{
    load_manifest, load_splits, Capture, DatasetManifest, ImageRecord, SkinTone, Split,
};
pub use pixels::Pixels;
pub use roi::{Corners, Roi};
pub use split::{patient_split, SplitFractions};
