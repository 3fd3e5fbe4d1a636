use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LesionLabel, Roi};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Dermoscopy,
    WideField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinTone {
    Light,
    Medium,
    Dark,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidInput(format!("unknown split {s:?}"))),
        }
    }
}

/// One image and its annotated lesions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub path: PathBuf,
    pub capture: Capture,
    #[serde(default)]
    pub skin_tone: SkinTone,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default)]
    pub rois: Vec<Roi>,
}

impl ImageRecord {
    /// 1 when any ROI carries a malignant label.
    pub fn image_label(&self) -> u8 {
        u8::from(self.rois.iter().any(Roi::is_malignant))
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    #[serde(flatten)]
    record: &'a ImageRecord,
    image_label: u8,
}

#[derive(Deserialize)]
struct ManifestFile {
    images: Vec<ImageRecord>,
}

#[derive(Serialize)]
struct ManifestFileOut<'a> {
    images: Vec<RecordOut<'a>>,
}

/// A validated collection of image records with optional split assignments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    splits: BTreeMap<String, Split>,
    /// Directory that relative record paths resolve against.
    root: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest from records, enforcing unique ids, valid ROIs and
    /// clamping ROIs to the image bounds when the dimensions are known.
    pub fn from_records(records: Vec<ImageRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(records.len());
        for mut record in records {
            if !seen.insert(record.image_id.clone()) {
                return Err(Error::DuplicateImage(record.image_id));
            }
            if let (Some(w), Some(h)) = (record.width, record.height) {
                record.rois = record
                    .rois
                    .iter()
                    .map(|roi| roi.clamp_to(w, h))
                    .collect::<Result<_>>()
                    .map_err(|e| Error::RejectedRecord {
                        image_id: record.image_id.clone(),
                        reason: e.to_string(),
                    })?;
            } else {
                for roi in &record.rois {
                    roi.validate().map_err(|e| Error::RejectedRecord {
                        image_id: record.image_id.clone(),
                        reason: e.to_string(),
                    })?;
                }
            }
            out.push(record);
        }
        Ok(DatasetManifest {
            records: out,
            splits: BTreeMap::new(),
            root: root.into(),
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.splits.get(image_id).copied()
    }

    /// Records assigned to `split`.
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records
            .iter()
            .filter(move |r| self.splits.get(&r.image_id) == Some(&split))
    }

    /// Attaches split assignments, checking that every id exists and that no
    /// patient spans two splits.
    pub fn with_splits(mut self, splits: BTreeMap<String, Split>) -> Result<Self> {
        let mut patient_split: HashMap<&str, Split> = HashMap::new();
        for (image_id, split) in &splits {
            let record = self.get(image_id).ok_or_else(|| {
                Error::InvalidInput(format!("split file references unknown image {image_id:?}"))
            })?;
            match patient_split.insert(record.patient_id.as_str(), *split) {
                Some(prev) if prev != *split => {
                    return Err(Error::InvalidInput(format!(
                        "patient {:?} appears in both {prev} and {split}",
                        record.patient_id
                    )))
                }
                _ => {}
            }
        }
        self.splits = splits;
        Ok(self)
    }

    /// Sub-manifest restricted to one split (assignments carried over).
    pub fn subset(&self, split: Split) -> DatasetManifest {
        let records: Vec<_> = self.split_records(split).cloned().collect();
        let splits = records
            .iter()
            .map(|r| (r.image_id.clone(), split))
            .collect();
        DatasetManifest {
            records,
            splits,
            root: self.root.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFileOut {
            images: self
                .records
                .iter()
                .map(|record| RecordOut {
                    record,
                    image_label: record.image_label(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn save_splits(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.splits)?;
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Lesion counts per label, in taxonomy order.
    pub fn label_counts(&self) -> [usize; 8] {
        let mut counts = [0usize; 8];
        for roi in self.records.iter().flat_map(|r| &r.rois) {
            if let Some(label) = roi.label {
                counts[label.index()] += 1;
            }
        }
        counts
    }

    /// Lesion counts with percentages, one row per lesion type.
    pub fn population_table(&self) -> String {
        let counts = self.label_counts();
        let total: usize = counts.iter().sum();
        let mut out = String::from("Lesion Type  Count\n");
        for label in LesionLabel::ALL {
            let n = counts[label.index()];
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * n as f64 / total as f64
            };
            out.push_str(&format!("{:<12} {} ({:.0}%)\n", label.code(), n, pct));
        }
        let malignant_images = self.records.iter().filter(|r| r.image_label() == 1).count();
        out.push_str(&format!(
            "images {} / lesions {} / malignant images {}\n",
            self.records.len(),
            total,
            malignant_images
        ));
        out
    }
}

fn schema_error(path: &Path, err: &serde_json::Error) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Parses a manifest JSON document. Image dimensions missing from the
/// document are read from the image file headers so ROIs can be clamped.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = read_text(path)?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| schema_error(path, &e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = file.images;
    for record in &mut records {
        if record.width.is_none() || record.height.is_none() {
            let image_path = if record.path.is_absolute() {
                record.path.clone()
            } else {
                root.join(&record.path)
            };
            if let Ok((w, h)) = image::image_dimensions(&image_path) {
                record.width = Some(w);
                record.height = Some(h);
            }
        }
    }
    DatasetManifest::from_records(records, root)
}

pub fn load_splits(path: &Path) -> Result<BTreeMap<String, Split>> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| schema_error(path, &e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LesionLabel::*;

    pub(crate) fn record(id: &str, patient: &str, labels: &[LesionLabel]) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            patient_id: patient.into(),
            path: format!("{id}.png").into(),
            capture: Capture::WideField,
            skin_tone: SkinTone::Light,
            width: Some(100),
            height: Some(100),
            rois: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Roi::new(20.0 + 20.0 * i as f64, 50.0, 10.0, 10.0).with_label(l))
                .collect(),
        }
    }

    #[test]
    fn image_label_is_or_over_rois() {
        assert_eq!(record("a", "p", &[Nv, Bcc]).image_label(), 1);
        assert_eq!(record("b", "p", &[Nv, Bkl]).image_label(), 0);
        assert_eq!(record("c", "p", &[Ob]).image_label(), 0);
    }

    #[test]
    fn duplicate_ids_are_fatal() {
        let recs = vec![record("a", "p", &[Nv]), record("a", "q", &[Nv])];
        assert!(matches!(
            DatasetManifest::from_records(recs, ""),
            Err(Error::DuplicateImage(id)) if id == "a"
        ));
    }

    #[test]
    fn outside_roi_rejects_record() {
        let mut r = record("a", "p", &[Nv]);
        r.rois[0].x_center = 500.0;
        assert!(matches!(
            DatasetManifest::from_records(vec![r], ""),
            Err(Error::RejectedRecord { .. })
        ));
    }

    #[test]
    fn parse_error_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, "{\"images\": [\n {\"image_id\": 3}\n]}").unwrap();
        match load_manifest(&path) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_with_clamping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut r = record("a", "p", &[Mel]);
        r.rois[0] = Roi::new(95.0, 50.0, 20.0, 10.0).with_label(Mel);
        std::fs::write(
            &path,
            serde_json::to_string(&serde_json::json!({ "images": [r] })).unwrap(),
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records()[0].rois[0].corners(), (85.0, 45.0, 100.0, 55.0));
        assert_eq!(m.records()[0].image_label(), 1);

        let again = dir.path().join("again.json");
        m.save(&again).unwrap();
        let reloaded = load_manifest(&again).unwrap();
        assert_eq!(reloaded.records(), m.records());
    }

    #[test]
    fn splits_must_be_patient_disjoint() {
        let m = DatasetManifest::from_records(
            vec![record("a", "p", &[Nv]), record("b", "p", &[Nv])],
            "",
        )
        .unwrap();
        let splits = BTreeMap::from([("a".to_string(), Split::Train), ("b".to_string(), Split::Val)]);
        assert!(m.with_splits(splits).is_err());
    }
}
