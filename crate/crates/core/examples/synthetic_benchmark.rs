//! End-to-end run on a generated dataset: two-stage one-class pipeline plus
//! the full strategy x aggregator sweep.
//!
//! cargo run --release -p dermtriage --example synthetic_benchmark -- OUT_DIR [DET_FACTOR] [CLS_FACTOR]

use std::path::PathBuf;
use std::time::Instant;

use dermtriage::classifier::{train_classifier, train_direct, ClassifierTrainConfig};
use dermtriage::data::{load_manifest, patient_split, Split, SplitFractions};
use dermtriage::detector::{train_detector, DetectorTrainConfig, Granularity};
use dermtriage::metrics::{iou, match_detections, stratified_report, MatchFlag};
use dermtriage::pipeline::{detect_split, scored_boxes, sweep, sweep_table, ModelSet};
use dermtriage::scorer::{AggregationKind, ScoringOptions, StrategyKind};
use dermtriage::synth::{generate_dataset, SynthConfig, MANIFEST_FILE};

fn main() -> dermtriage::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_benchmark".into()));
    let det_factor: f64 = args.next().map_or(0.1, |s| s.parse().expect("factor"));
    let cls_factor: f64 = args.next().map_or(0.3, |s| s.parse().expect("factor"));

    let t = Instant::now();
    let manifest_path = out.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        load_manifest(&manifest_path)?
    } else {
        generate_dataset(&SynthConfig::default(), &out)?.manifest
    };
    let manifest = patient_split(&manifest, SplitFractions::new(0.8, 0.0)?, 7)?;
    eprintln!("data ready in {:?}: {} train / {} test", t.elapsed(),
        manifest.split_records(Split::Train).count(), manifest.split_records(Split::Test).count());

    let det_cfg = DetectorTrainConfig::default().scaled(det_factor)?;
    let t = Instant::now();
    let one_class = train_detector(&manifest, Granularity::OneClass, &det_cfg)?;
    eprintln!("one-class detector ({} steps) in {:?}", det_cfg.total_steps, t.elapsed());
    let dets = detect_split(&one_class, &manifest, Some(Split::Test))?;
    if std::env::var_os("DETECTOR_ONLY").is_some() {
        detection_breakdown(&manifest, &dets);
        return Ok(());
    }
    let cls_cfg = ClassifierTrainConfig { crop_side: 64, ..ClassifierTrainConfig::default() }.scaled(cls_factor)?;
    let t = Instant::now();
    let roi = train_classifier(&manifest, &cls_cfg)?;
    eprintln!("roi classifier ({} epochs) in {:?}", cls_cfg.epochs, t.elapsed());

    let models = ModelSet { one_class: Some(&one_class), roi_classifier: Some(&roi), ..Default::default() };
    let scores = dermtriage::pipeline::score_split(&models, StrategyKind::TwoStage, AggregationKind::NoisyOr,
        &ScoringOptions::default(), &manifest, Some(Split::Test))?;
    let score_map = scores.iter().map(|s| (s.image_id.clone(), s.probability)).collect();
    let test = manifest.subset(Split::Test);
    let report = stratified_report(&test, &score_map, Some(&scored_boxes(&dets)))?;
    println!("{}", report.to_table());

    if std::env::var_os("FULL_SWEEP").is_some() {
        let t = Instant::now();
        let malignancy = train_detector(&manifest, Granularity::Malignancy, &det_cfg)?;
        let subtype = train_detector(&manifest, Granularity::SubType, &det_cfg)?;
        let direct = train_direct(&manifest, &cls_cfg)?;
        eprintln!("remaining models in {:?}", t.elapsed());
        let models = ModelSet {
            direct: Some(&direct),
            malignancy: Some(&malignancy),
            subtype: Some(&subtype),
            ..models
        };
        let (rows, _) = sweep(&models, &ScoringOptions::default(), &manifest, Some(Split::Test))?;
        println!("{}", sweep_table(&rows));
    }
    Ok(())
}

/// Counts true positives, duplicates (false positives overlapping a lesion)
/// and background false positives at IoU 0.5.
fn detection_breakdown(
    manifest: &dermtriage::data::DatasetManifest,
    dets: &std::collections::BTreeMap<String, Vec<dermtriage::detector::Detection>>,
) {
    let (mut tp, mut dup, mut bg, mut gts) = (0, 0, 0, 0);
    for (id, d) in dets {
        let gt = &manifest.get(id).unwrap().rois;
        gts += gt.len();
        let boxes: Vec<_> = d.iter().map(|x| x.scored_box()).collect();
        let m = match_detections(&boxes, gt, 0.5);
        for (b, f) in boxes.iter().zip(&m.flags) {
            match f {
                MatchFlag::TruePositive => tp += 1,
                _ if gt.iter().any(|g| iou(&b.roi, g) > 0.0) => dup += 1,
                _ => bg += 1,
            }
        }
    }
    let ids: Vec<&String> = dets.keys().collect();
    let preds: Vec<Vec<_>> = ids.iter().map(|id| dets[*id].iter().map(|d| d.scored_box()).collect()).collect();
    let truth: Vec<Vec<_>> = ids.iter().map(|id| manifest.get(id).unwrap().rois.clone()).collect();
    let map = dermtriage::metrics::map_at(&preds, &truth, &[0.5, 0.75]).unwrap();
    println!(
        "lesions {gts}: tp@0.5 {tp}, overlapping fp {dup}, background fp {bg}; mAP@0.5 {:.4} mAP@0.75 {:.4}",
        map.at(0.5).unwrap(),
        map.at(0.75).unwrap()
    );
}
