use std::path::Path;

use serde::Deserialize;

use super::{Capture, DatasetManifest, ImageRecord, LesionLabel, Roi, SkinTone};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct LabelRow {
    image: String,
    label: String,
}

/// Full-frame ROI scaled by `margin` around the image center.
pub fn full_frame_roi(width: u32, height: u32, margin: f64) -> Roi {
    Roi::new(
        f64::from(width) / 2.0,
        f64::from(height) / 2.0,
        f64::from(width) * margin,
        f64::from(height) * margin,
    )
}

/// Reads an `image,label` CSV describing single-lesion dermoscopy images and
/// produces one record per image with a synthetic centered ROI.
///
/// Image files are looked up as `<images_dir>/<image>.{jpg,png}` (or the name
/// as given when it already carries an extension). Each image is treated as
/// its own patient since the label file carries no patient ids.
pub fn ingest_isic(images_dir: &Path, labels_file: &Path, margin: f64) -> Result<DatasetManifest> {
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::Config(format!("margin factor must be in (0, 1], got {margin}")));
    }
    let mut reader = csv::Reader::from_path(labels_file)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        let label: LesionLabel = row.label.parse()?;
        let path = resolve_image(images_dir, &row.image)?;
        let (w, h) = image::image_dimensions(&path)
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        let roi = full_frame_roi(w, h, margin).with_label(label);
        records.push(ImageRecord {
            image_id: row.image.clone(),
            patient_id: row.image,
            path,
            capture: Capture::Dermoscopy,
            skin_tone: SkinTone::Unknown,
            width: Some(w),
            height: Some(h),
            rois: vec![roi],
        });
    }
    DatasetManifest::from_records(records, images_dir)
}

fn resolve_image(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let direct = dir.join(name);
    if direct.extension().is_some() && direct.exists() {
        return Ok(direct);
    }
    for ext in ["jpg", "jpeg", "png"] {
        let candidate = dir.join(format!("{name}.{ext}"));
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::io(
        format!("image {name:?} not found in {}", dir.display()),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Pixels;

    #[test]
    fn full_frame_box() {
        let roi = full_frame_roi(100, 100, 1.0);
        assert_eq!((roi.x_center, roi.y_center, roi.width, roi.height), (50.0, 50.0, 100.0, 100.0));
    }

    #[test]
    fn ingest_labels() {
        let dir = tempfile::tempdir().unwrap();
        Pixels::filled(100, 100, [0.5; 3])
            .save_png(&dir.path().join("ISIC_1.png"))
            .unwrap();
        Pixels::filled(40, 20, [0.5; 3])
            .save_png(&dir.path().join("ISIC_2.png"))
            .unwrap();
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "image,label\nISIC_1,MEL\nISIC_2,NV\n").unwrap();
        let m = ingest_isic(dir.path(), &csv, 1.0).unwrap();
        assert_eq!(m.len(), 2);
        let first = &m.records()[0];
        assert_eq!(first.rois[0].label, Some(LesionLabel::Mel));
        assert_eq!(first.image_label(), 1);
        assert_eq!(first.capture, Capture::Dermoscopy);
        assert_eq!(first.rois[0].corners(), (0.0, 0.0, 100.0, 100.0));
        assert_eq!(m.records()[1].image_label(), 0);
    }

    #[test]
    fn unknown_class_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        Pixels::filled(10, 10, [0.5; 3])
            .save_png(&dir.path().join("a.png"))
            .unwrap();
        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "image,label\na,XX\n").unwrap();
        assert!(matches!(
            ingest_isic(dir.path(), &csv, 1.0),
            Err(Error::UnknownLabel(s)) if s == "XX"
        ));
    }
}
