use std::collections::{BTreeMap, BTreeSet};

use dermtriage::data::{
    extract_crop, load_manifest, patient_split, Capture, DatasetManifest, ImageRecord, LesionLabel, Pixels, Roi,
    SkinTone, Split, SplitFractions,
};
use dermtriage::synth::DISCOVERY_COUNTS;
use dermtriage::Error;
use proptest::prelude::*;

fn record(id: usize, patient: usize, labels: &[LesionLabel]) -> ImageRecord {
    ImageRecord {
        image_id: format!("img{id:05}"),
        patient_id: format!("p{patient:04}"),
        path: format!("img{id:05}.png").into(),
        capture: if id % 3 == 0 { Capture::Dermoscopy } else { Capture::WideField },
        skin_tone: SkinTone::Unknown,
        width: Some(100),
        height: Some(100),
        rois: labels
            .iter()
            .enumerate()
            .map(|(i, l)| Roi::new(20.0 + 10.0 * i as f64, 30.0, 8.0, 8.0).with_label(*l))
            .collect(),
    }
}

#[test]
fn image_label_is_or_over_rois() {
    assert_eq!(record(0, 0, &[LesionLabel::Nv, LesionLabel::Bcc]).image_label(), 1);
    assert_eq!(record(0, 0, &[LesionLabel::Nv, LesionLabel::Bkl]).image_label(), 0);
}

#[test]
fn discovery_population_fixture() {
    let mut records = Vec::new();
    for label in LesionLabel::ALL {
        for _ in 0..DISCOVERY_COUNTS[label.index()] {
            let id = records.len();
            records.push(record(id, id / 2, &[label]));
        }
    }
    let manifest = DatasetManifest::from_records(records, "/data").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    manifest.save(&path).unwrap();
    let loaded = load_manifest(&path).unwrap();
    let counts = loaded.label_counts();
    assert_eq!(counts[LesionLabel::Mel.index()], 596);
    assert_eq!(counts[LesionLabel::Nv.index()], 1343);
    assert_eq!(counts.iter().sum::<usize>(), 8243);
    let table = loaded.population_table();
    assert!(table.contains("MEL          596 (7%)"), "{table}");
    assert!(table.contains("NV           1343 (16%)"), "{table}");
}

#[test]
fn manifest_json_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::from_records(vec![record(1, 1, &[LesionLabel::Mel]), record(2, 2, &[])], dir.path())
            .unwrap();
    let path = dir.path().join("m.json");
    manifest.save(&path).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.records(), manifest.records());

    std::fs::write(&path, "{\"images\": [\n{\"image_id\": 3}]}").unwrap();
    match load_manifest(&path) {
        Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected schema error, got {other:?}"),
    }
    let dup = DatasetManifest::from_records(vec![record(1, 1, &[]), record(1, 2, &[])], "/");
    assert!(matches!(dup, Err(Error::DuplicateImage(_))));
    let mut outside = record(4, 4, &[LesionLabel::Nv]);
    outside.rois[0] = Roi::new(500.0, 500.0, 4.0, 4.0);
    assert!(matches!(
        DatasetManifest::from_records(vec![outside], "/"),
        Err(Error::RejectedRecord { .. })
    ));
}

#[test]
fn crop_contract() {
    let mut img = Pixels::filled(100, 100, [0.2, 0.4, 0.6]);
    img.set_rgb(0, 0, [1.0, 0.0, 0.0]);
    let crop = extract_crop(&img, &Roi::new(5.0, 5.0, 20.0, 20.0), 32).unwrap();
    assert_eq!((crop.width(), crop.height()), (32, 32));
    // Everything left of and above the frame replicates the corner pixel.
    assert_eq!(crop.rgb(0, 0), [1.0, 0.0, 0.0]);
    assert!(extract_crop(&img, &Roi::new(-50.0, -50.0, 10.0, 10.0), 32).is_err());
}

fn clustered(patients: usize) -> DatasetManifest {
    let records = (0..patients * 3)
        .filter(|i| i % 3 != 2 || i % 7 == 0)
        .map(|i| record(i, i / 3, &[LesionLabel::Nv]))
        .collect();
    DatasetManifest::from_records(records, "/").unwrap()
}

#[test]
fn split_is_deterministic_and_validates() {
    let m = clustered(10);
    let f = SplitFractions::new(0.85, 0.0).unwrap();
    let a = patient_split(&m, f, 7).unwrap();
    let b = patient_split(&m, f, 7).unwrap();
    assert_eq!(a.splits(), b.splits());
    assert!(a.split_records(Split::Val).next().is_none());
    assert!(patient_split(&clustered(1), f, 7).is_err());
    assert!(SplitFractions::new(0.0, 0.2).is_err());
    assert!(SplitFractions::new(0.9, 0.2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_never_share_patients(seed in any::<u64>(), patients in 2usize..60, train in 0.3..0.9f64, val in 0.0..0.1f64) {
        let m = clustered(patients);
        let out = patient_split(&m, SplitFractions::new(train, val).unwrap(), seed).unwrap();
        let mut by_patient: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for r in out.records() {
            by_patient.entry(&r.patient_id).or_default().insert(out.split_of(&r.image_id).unwrap());
        }
        prop_assert!(by_patient.values().all(|s| s.len() == 1));
        prop_assert_eq!(out.splits().len(), m.len());
    }
}
