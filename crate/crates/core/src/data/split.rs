use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64) -> Result<Self> {
        let f = SplitFractions { train, val };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val >= 0.0) || self.train + self.val > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "train fraction must be positive, val non-negative, sum <= 1; got train={} val={}",
                self.train, self.val
            )));
        }
        Ok(())
    }
}

/// Assigns whole patients to train/val/test.
///
/// Patients are shuffled with a seeded generator and dealt out in that order
/// until each split reaches its share of images; whatever is left goes to
/// test.
pub fn patient_split(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut images_per_patient: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.records() {
        images_per_patient
            .entry(r.patient_id.as_str())
            .or_default()
            .push(r.image_id.as_str());
    }
    if images_per_patient.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "patient split needs at least 2 patients, found {}",
            images_per_patient.len()
        )));
    }
    let mut patients: Vec<&str> = images_per_patient.keys().copied().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = manifest.len() as f64;
    let train_target = fractions.train * total;
    let val_target = (fractions.train + fractions.val) * total;
    let mut assigned = 0usize;
    let mut splits = BTreeMap::new();
    let mut used = BTreeSet::new();
    for (i, patient) in patients.iter().enumerate() {
        let images = &images_per_patient[patient];
        let remaining = patients.len() - i;
        // Fill each split up to the point where adding this patient gets
        // closer to the target than stopping, keeping at least one patient
        // for train and for a requested val split.
        let pos = assigned as f64 + images.len() as f64 / 2.0;
        let split = if pos < train_target || !used.contains(&Split::Train) {
            Split::Train
        } else if pos < val_target || (!used.contains(&Split::Val) && fractions.val > 0.0 && remaining >= 1) {
            Split::Val
        } else {
            Split::Test
        };
        used.insert(split);
        for id in images {
            splits.insert((*id).to_string(), split);
        }
        assigned += images.len();
    }
    manifest.clone().with_splits(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Capture, ImageRecord, LesionLabel, Roi, SkinTone};

    fn manifest(patients: usize, images_each: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for p in 0..patients {
            for i in 0..images_each {
                records.push(ImageRecord {
                    image_id: format!("img{p}_{i}"),
                    patient_id: format!("pat{p}"),
                    path: "x.png".into(),
                    capture: Capture::WideField,
                    skin_tone: SkinTone::Unknown,
                    width: None,
                    height: None,
                    rois: vec![Roi::new(5.0, 5.0, 2.0, 2.0).with_label(LesionLabel::Nv)],
                });
            }
        }
        DatasetManifest::from_records(records, "").unwrap()
    }

    fn patients_by_split(m: &DatasetManifest) -> BTreeMap<Split, BTreeSet<String>> {
        let mut out: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for r in m.records() {
            out.entry(m.split_of(&r.image_id).unwrap())
                .or_default()
                .insert(r.patient_id.clone());
        }
        out
    }

    #[test]
    fn deterministic_for_seed() {
        let m = manifest(10, 2);
        let f = SplitFractions::new(0.85, 0.15).unwrap();
        let a = patient_split(&m, f, 7).unwrap();
        let b = patient_split(&m, f, 7).unwrap();
        assert_eq!(a.splits(), b.splits());
    }

    #[test]
    fn patient_disjoint_for_many_seeds() {
        let m = manifest(37, 3);
        let f = SplitFractions::new(0.6, 0.2).unwrap();
        for seed in 0..50 {
            let s = patient_split(&m, f, seed).unwrap();
            let groups = patients_by_split(&s);
            let all: Vec<_> = groups.values().flatten().collect();
            let unique: BTreeSet<_> = all.iter().collect();
            assert_eq!(all.len(), unique.len(), "seed {seed}");
            assert_eq!(s.splits().len(), m.len());
        }
    }

    #[test]
    fn achieved_fractions_close_to_request() {
        let m = manifest(250, 2);
        let f = SplitFractions::new(0.7, 0.15).unwrap();
        for seed in [1, 2, 3] {
            let s = patient_split(&m, f, seed).unwrap();
            let frac = |split| s.split_records(split).count() as f64 / m.len() as f64;
            assert!((frac(Split::Train) - 0.7).abs() <= 0.02);
            assert!((frac(Split::Val) - 0.15).abs() <= 0.02);
        }
    }

    #[test]
    fn single_patient_is_error() {
        let m = manifest(1, 4);
        assert!(patient_split(&m, SplitFractions::new(0.8, 0.2).unwrap(), 0).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(SplitFractions::new(0.9, 0.2).is_err());
        assert!(SplitFractions::new(0.0, 0.2).is_err());
    }
}
