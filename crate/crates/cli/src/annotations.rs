//! Append-only store of reviewer annotations. Every submission becomes a new
//! revision in `revisions.jsonl`; `manifest.json` always holds the latest
//! revision of each image and loads with the ordinary manifest reader.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use dermtriage::data::{DatasetManifest, ImageRecord};
use dermtriage::io_util::from_json_lines;
use dermtriage::{Error, Result};
use serde::{Deserialize, Serialize};

pub const REVISIONS_FILE: &str = "revisions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    /// Store-wide sequence number, starting at 1.
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    pub record: ImageRecord,
}

#[derive(Debug)]
pub struct AnnotationStore {
    dir: PathBuf,
    revisions: Vec<Revision>,
}

impl AnnotationStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let log = dir.join(REVISIONS_FILE);
        let revisions = if log.exists() {
            let text =
                std::fs::read_to_string(&log).map_err(|e| Error::io(format!("reading {}", log.display()), e))?;
            from_json_lines(&text)?
        } else {
            Vec::new()
        };
        Ok(AnnotationStore {
            dir: dir.to_path_buf(),
            revisions,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    /// Validates a record as a one-image manifest would, then appends it.
    /// The stored record is the normalized one (ROIs clamped to the frame).
    pub fn submit(&mut self, record: ImageRecord, reviewer: Option<String>) -> Result<Revision> {
        let normalized = DatasetManifest::from_records(vec![record], &self.dir)?.records()[0].clone();
        let revision = Revision {
            revision: self.revisions.last().map_or(1, |r| r.revision + 1),
            reviewer,
            record: normalized,
        };
        let log = self.dir.join(REVISIONS_FILE);
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| Error::io(format!("opening {}", log.display()), e))?;
        writeln!(file, "{}", serde_json::to_string(&revision)?)
            .and_then(|_| file.sync_data())
            .map_err(|e| Error::io(format!("appending to {}", log.display()), e))?;
        self.revisions.push(revision.clone());
        self.write_manifest()?;
        Ok(revision)
    }

    /// Latest revision of every image, ordered by image id.
    pub fn latest(&self) -> Vec<ImageRecord> {
        let mut by_id: BTreeMap<&str, &ImageRecord> = BTreeMap::new();
        for r in &self.revisions {
            by_id.insert(&r.record.image_id, &r.record);
        }
        by_id.into_values().cloned().collect()
    }

    pub fn history(&self, image_id: &str) -> Vec<Revision> {
        self.revisions
            .iter()
            .filter(|r| r.record.image_id == image_id)
            .cloned()
            .collect()
    }

    fn write_manifest(&self) -> Result<()> {
        let manifest = DatasetManifest::from_records(self.latest(), &self.dir)?;
        let path = self.manifest_path();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, manifest.to_json()?).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(format!("replacing {}", path.display()), e))
    }
}
