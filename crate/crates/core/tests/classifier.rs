use std::collections::HashMap;
use std::sync::OnceLock;

use dermtriage::classifier::{
    cosine_lr, predict_roi, to_chw, train_classifier, train_on_inputs, ClassifierModel, ClassifierTrainConfig,
    InputKind, LabeledInput,
};
use dermtriage::clinical::{
    encoded_len, predict_combined, train_clinical, train_combined, CombinedModel, CovariateRow, LogisticOptions,
};
use dermtriage::data::{patient_split, DatasetManifest, Pixels, Roi, Split, SplitFractions};
use dermtriage::metrics::{auc, ScoredLabel};
use dermtriage::nn::sigmoid;
use dermtriage::synth::{generate_dataset, SynthConfig};
use dermtriage::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 100, 0.01).unwrap(), 0.01);
    assert_eq!(cosine_lr(50, 100, 0.01).unwrap(), 0.005);
    assert_eq!(cosine_lr(100, 100, 0.01).unwrap(), 0.0);
    assert!(matches!(cosine_lr(101, 100, 0.01), Err(Error::Config(_))));
    assert!(matches!(cosine_lr(0, 0, 0.01), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn cosine_schedule_is_non_increasing(t_max in 1usize..5000, steps in prop::collection::vec(0.0..=1.0f64, 2..40)) {
        let mut ts: Vec<usize> = steps.iter().map(|f| (f * t_max as f64) as usize).collect();
        ts.sort_unstable();
        let mut last = f64::INFINITY;
        for t in ts {
            let lr = cosine_lr(t, t_max, 0.01).unwrap();
            let oracle = 0.01 * (1.0 + (std::f64::consts::PI * t as f64 / t_max as f64).cos()) / 2.0;
            prop_assert!((lr - oracle).abs() < 1e-15);
            prop_assert!(lr <= last);
            last = lr;
        }
    }
}

#[test]
fn classifier_schedule_scaling() {
    let base = ClassifierTrainConfig::default();
    assert_eq!((base.epochs, base.batch_size, base.base_lr), (100, 64, 0.01));
    let scaled = base.scaled(0.1).unwrap();
    assert_eq!(scaled.epochs, 10);
    assert_eq!(ClassifierTrainConfig { epochs: 0, ..base.clone() }.validate().is_err(), true);
    let combined = ClassifierTrainConfig::combined_default();
    assert_eq!((combined.epochs, combined.batch_size, combined.base_lr), (30, 64, 0.001));
}

fn patch_input(rng: &mut ChaCha8Rng, bright: bool) -> Vec<f32> {
    let mut img = Pixels::filled(32, 32, [0.5, 0.5, 0.5]);
    let v = if bright { 0.9 } else { 0.1 };
    for y in 8..24 {
        for x in 8..24 {
            let n = rng.gen_range(-0.05..0.05f32);
            img.set_rgb(x, y, [v + n, v + n, v + n]);
        }
    }
    to_chw(&img)
}

#[test]
fn overfits_a_small_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train: Vec<LabeledInput> = (0..16)
        .map(|i| LabeledInput {
            input: patch_input(&mut rng, i % 2 == 0),
            label: i % 2 == 0,
        })
        .collect();
    let config = ClassifierTrainConfig {
        epochs: 50,
        batch_size: 16,
        crop_side: 32,
        flips: false,
        ..ClassifierTrainConfig::default()
    };
    let model = train_on_inputs(InputKind::RoiCrop, train, Vec::new(), &config).unwrap();
    let first = model.curve.first().unwrap().loss;
    let last = model.curve.last().unwrap().loss;
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn single_class_training_set_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let train: Vec<LabeledInput> = (0..4)
        .map(|_| LabeledInput {
            input: patch_input(&mut rng, true),
            label: true,
        })
        .collect();
    let config = ClassifierTrainConfig {
        epochs: 1,
        crop_side: 32,
        ..ClassifierTrainConfig::default()
    };
    assert!(matches!(
        train_on_inputs(InputKind::RoiCrop, train, Vec::new(), &config),
        Err(Error::Training(_))
    ));
}

fn tiny_model() -> ClassifierModel {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train: Vec<LabeledInput> = (0..8)
        .map(|i| LabeledInput {
            input: patch_input(&mut rng, i % 2 == 0),
            label: i % 2 == 0,
        })
        .collect();
    let config = ClassifierTrainConfig {
        epochs: 2,
        crop_side: 32,
        ..ClassifierTrainConfig::default()
    };
    train_on_inputs(InputKind::RoiCrop, train, Vec::new(), &config).unwrap()
}

#[test]
fn roi_score_depends_only_on_crop_pixels() {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut a = Pixels::filled(96, 96, [0.8, 0.6, 0.5]);
    for y in 0..96 {
        for x in 0..96 {
            let v = rng.gen_range(0.0..1.0f32);
            a.set_rgb(x, y, [v, 0.5 * v, 0.2]);
        }
    }
    // Shift the content by (11, 7) pixels.
    let mut b = Pixels::filled(96, 96, [0.0, 0.0, 0.0]);
    for y in 0..89 {
        for x in 0..85 {
            b.set_rgb(x + 11, y + 7, a.rgb(x, y));
        }
    }
    let roi_a = Roi::new(30.0, 30.0, 20.0, 16.0);
    let roi_b = Roi::new(41.0, 37.0, 20.0, 16.0);
    let sa = predict_roi(&model, "a", &a, &roi_a).unwrap();
    let sb = predict_roi(&model, "b", &b, &roi_b).unwrap();
    assert_eq!(sa.probability, sb.probability);
    assert!(sa.probability > 0.0 && sa.probability < 1.0);
    let other = predict_roi(&model, "a", &a, &Roi::new(60.0, 60.0, 20.0, 16.0)).unwrap();
    assert_ne!(other.probability, sa.probability);
}

struct CombinedFixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    rows: Vec<CovariateRow>,
    schema: dermtriage::clinical::CovariateSchema,
    classifier: ClassifierModel,
    combined: CombinedModel,
}

/// Covariates that separate the classes on their own, with a weakly trained
/// image classifier.
fn combined_fixture() -> &'static CombinedFixture {
    static F: OnceLock<CombinedFixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            images: 160,
            covariate_strength: 4.0,
            seed: 5,
            ..SynthConfig::default()
        };
        let out = generate_dataset(&cfg, dir.path()).unwrap();
        let manifest = patient_split(&out.manifest, SplitFractions::new(0.6, 0.2).unwrap(), 3).unwrap();
        let cls_cfg = ClassifierTrainConfig {
            epochs: 1,
            crop_side: 32,
            ..ClassifierTrainConfig::default()
        };
        let classifier = train_classifier(&manifest, &cls_cfg).unwrap();
        let combined = train_combined(
            &classifier,
            &manifest,
            &out.covariates,
            &out.schema,
            &ClassifierTrainConfig::combined_default(),
        )
        .unwrap();
        CombinedFixture {
            _dir: dir,
            manifest,
            rows: out.covariates,
            schema: out.schema,
            classifier,
            combined,
        }
    })
}

#[test]
fn combined_model_trains_only_the_fused_layer() {
    let f = combined_fixture();
    let m = &f.combined;
    assert_eq!(m.backbone, f.classifier.net.backbone);
    assert_eq!(m.frozen_parameter_count(), f.classifier.net.backbone.num_params());
    let inputs = f.classifier.net.backbone.feature_dim() + encoded_len(&f.schema, &m.covariate_stats);
    assert_eq!(m.trainable_parameter_count(), inputs + 1);
    assert_eq!(m.fused.weight.len(), inputs);
    assert_eq!(m.curve.len(), 30);
    assert_eq!(m.config.base_lr, 0.001);
}

#[test]
fn combined_logit_is_image_plus_covariate_terms() {
    let f = combined_fixture();
    let by_id: HashMap<&str, &CovariateRow> = f.rows.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let records: Vec<_> = f.manifest.records().iter().take(2).collect();
    let images: Vec<Pixels> = records.iter().map(|r| Pixels::open(&f.manifest.resolve_path(r)).unwrap()).collect();
    let rows: Vec<&CovariateRow> = records.iter().map(|r| by_id[r.image_id.as_str()]).collect();
    let p00 = f.combined.logit_parts(&images[0], rows[0]).unwrap();
    let p01 = f.combined.logit_parts(&images[0], rows[1]).unwrap();
    let p10 = f.combined.logit_parts(&images[1], rows[0]).unwrap();
    assert_eq!(p00.image, p01.image);
    assert_eq!(p00.covariates, p10.covariates);
    let prob = predict_combined(&f.combined, &images[0], rows[0]).unwrap();
    assert!((prob - sigmoid(p00.total())).abs() < 1e-12);
    let saved = tempfile::tempdir().unwrap();
    f.combined.save(saved.path()).unwrap();
    assert_eq!(&CombinedModel::load(saved.path()).unwrap(), &f.combined);
}

#[test]
fn combined_matches_covariates_only_model_when_covariates_separate() {
    let f = combined_fixture();
    let clinical = train_clinical(&f.manifest, &f.rows, &f.schema, &LogisticOptions::default()).unwrap();
    let by_id: HashMap<&str, &CovariateRow> = f.rows.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let (mut logistic, mut combined) = (Vec::new(), Vec::new());
    for record in f.manifest.split_records(Split::Val) {
        let row = by_id[record.image_id.as_str()];
        let label = record.image_label() == 1;
        let image = Pixels::open(&f.manifest.resolve_path(record)).unwrap();
        logistic.push(ScoredLabel::new(clinical.predict(row).unwrap(), label));
        combined.push(ScoredLabel::new(predict_combined(&f.combined, &image, row).unwrap(), label));
    }
    let (l, c) = (auc(&logistic).unwrap(), auc(&combined).unwrap());
    assert!(l > 0.9, "covariates should separate the classes, AUC {l}");
    assert!(c >= l - 0.02, "combined {c} vs covariates-only {l}");
}

#[test]
fn missing_covariates_exclude_rows_and_all_missing_is_fatal() {
    let f = combined_fixture();
    let config = ClassifierTrainConfig {
        epochs: 1,
        ..ClassifierTrainConfig::combined_default()
    };
    let err = train_combined(&f.classifier, &f.manifest, &[], &f.schema, &config).unwrap_err();
    assert!(matches!(err, Error::Training(_)));
    let half: Vec<CovariateRow> = f.rows.iter().step_by(2).cloned().collect();
    let m = train_combined(&f.classifier, &f.manifest, &half, &f.schema, &config).unwrap();
    assert_eq!(m.trainable_parameter_count(), f.combined.trainable_parameter_count());
}
