use dermtriage::classifier::{predict_roi, ClassifierMeta, ClassifierModel, ClassifierTrainConfig, ConvNet, InputKind};
use dermtriage::data::{LesionLabel, Pixels, Roi};
use dermtriage::detector::{Detection, DetectorBackend, Granularity};
use dermtriage::scorer::{
    read_scores, score_direct, score_one_step, score_two_stage, write_scores, AggregationKind, EmptyPolicy,
    ScoringOptions, StrategyKind,
};
use dermtriage::{Error, Result};

/// Detector stand-in returning a fixed list.
struct Fixed {
    granularity: Granularity,
    detections: Vec<Detection>,
}

impl DetectorBackend for Fixed {
    fn granularity(&self) -> Granularity {
        self.granularity
    }

    fn detect(&self, image_id: &str, _image: &Pixels) -> Result<Vec<Detection>> {
        Ok(self
            .detections
            .iter()
            .map(|d| Detection { image_id: image_id.into(), ..d.clone() })
            .collect())
    }

    fn export_features(&self, _image: &Pixels, detections: &[Detection]) -> Result<Vec<Vec<f32>>> {
        Ok(detections.iter().map(|_| vec![0.0]).collect())
    }
}

fn classifier(input: InputKind) -> ClassifierModel {
    let config = ClassifierTrainConfig {
        crop_side: 32,
        ..Default::default()
    };
    ClassifierModel {
        meta: ClassifierMeta {
            input,
            config,
            malignant_classes: vec!["MEL".into(), "BCC".into(), "AKIEC".into()],
            channels: ConvNet::CHANNELS.to_vec(),
            training_curve: String::new(),
        },
        net: ConvNet::new(32, 3),
        curve: Vec::new(),
    }
}

fn image() -> Pixels {
    let mut img = Pixels::filled(64, 48, [0.8, 0.6, 0.5]);
    for y in 10..30 {
        for x in 12..40 {
            img.set_rgb(x, y, [0.3, 0.2, 0.2]);
        }
    }
    img
}

fn one_class(boxes: &[Roi]) -> Fixed {
    Fixed {
        granularity: Granularity::OneClass,
        detections: boxes.iter().map(|r| Detection::new("x", *r, vec![0.9])).collect(),
    }
}

#[test]
fn two_stage_single_detection_equals_roi_prediction() {
    let roi = Roi::new(25.0, 20.0, 28.0, 20.0);
    let cls = classifier(InputKind::RoiCrop);
    let want = predict_roi(&cls, "img", &image(), &roi).unwrap().probability;
    for kind in AggregationKind::ALL {
        let s = score_two_stage(&one_class(&[roi]), &cls, "img", &image(), kind, &ScoringOptions::default()).unwrap();
        assert_eq!(s.probability, want);
        assert_eq!(s.contributing.len(), 1);
        assert_eq!(s.strategy, StrategyKind::TwoStage);
    }
}

#[test]
fn two_stage_max_and_empty_policy() {
    let cls = classifier(InputKind::RoiCrop);
    let rois = [Roi::new(25.0, 20.0, 28.0, 20.0), Roi::new(50.0, 40.0, 10.0, 10.0)];
    let s = score_two_stage(&one_class(&rois), &cls, "img", &image(), AggregationKind::Maximum, &Default::default())
        .unwrap();
    let max = s.contributing.iter().map(|c| c.probability).fold(0.0, f64::max);
    assert_eq!(s.probability, max);

    let empty = score_two_stage(&one_class(&[]), &cls, "img", &image(), AggregationKind::NoisyOr, &Default::default())
        .unwrap();
    assert_eq!(empty.probability, 0.0);
    assert!(empty.contributing.is_empty());
    let opts = ScoringOptions {
        empty: EmptyPolicy::Fixed(0.25),
        ..Default::default()
    };
    let prior = score_two_stage(&one_class(&[]), &cls, "img", &image(), AggregationKind::NoisyOr, &opts).unwrap();
    assert_eq!(prior.probability, 0.25);
}

#[test]
fn two_stage_rejects_multi_class_detector() {
    let det = Fixed {
        granularity: Granularity::Malignancy,
        detections: vec![],
    };
    let err = score_two_stage(&det, &classifier(InputKind::RoiCrop), "i", &image(), AggregationKind::Average, &Default::default());
    assert!(matches!(err, Err(Error::ModelMismatch(_))));
}

#[test]
fn one_step_reductions() {
    let roi = Roi::new(25.0, 20.0, 28.0, 20.0);
    let c2 = Fixed {
        granularity: Granularity::Malignancy,
        detections: vec![Detection::new("x", roi, vec![0.3, 0.7])],
    };
    let s = score_one_step(&c2, "i", &image(), AggregationKind::Average, &Default::default()).unwrap();
    assert_eq!(s.probability, 0.7);
    assert_eq!(s.strategy, StrategyKind::OneStepMalignancy);

    let mut probs = vec![0.0; 8];
    probs[LesionLabel::Mel.index()] = 0.2;
    probs[LesionLabel::Bcc.index()] = 0.1;
    probs[LesionLabel::Akiec.index()] = 0.1;
    probs[LesionLabel::Nv.index()] = 0.3;
    probs[LesionLabel::Bkl.index()] = 0.3;
    let manual = probs[LesionLabel::Mel.index()] + probs[LesionLabel::Bcc.index()] + probs[LesionLabel::Akiec.index()];
    let c8 = Fixed {
        granularity: Granularity::SubType,
        detections: vec![Detection::new("x", roi, probs)],
    };
    let s = score_one_step(&c8, "i", &image(), AggregationKind::Maximum, &Default::default()).unwrap();
    assert!((s.probability - manual).abs() < 1e-15);
    assert!((s.probability - 0.4).abs() < 1e-12);

    let empty = Fixed {
        granularity: Granularity::SubType,
        detections: vec![],
    };
    assert_eq!(score_one_step(&empty, "i", &image(), AggregationKind::Maximum, &Default::default()).unwrap().probability, 0.0);
    let err = score_one_step(&one_class(&[roi]), "i", &image(), AggregationKind::Maximum, &Default::default());
    assert!(matches!(err, Err(Error::ModelMismatch(_))));
}

#[test]
fn direct_scores_are_deterministic_probabilities() {
    let cls = classifier(InputKind::WholeImage);
    let a = score_direct(&cls, "i", &image()).unwrap();
    let b = score_direct(&cls, "i", &image()).unwrap();
    assert_eq!(a, b);
    assert!(a.probability > 0.0 && a.probability < 1.0);
    assert!(a.contributing.is_empty() && a.aggregator.is_none());
    assert!(score_direct(&classifier(InputKind::RoiCrop), "i", &image()).is_err());
}

#[test]
fn score_dump_round_trip() {
    let cls = classifier(InputKind::RoiCrop);
    let rois = [Roi::new(25.0, 20.0, 28.0, 20.0)];
    let scores = vec![
        score_two_stage(&one_class(&rois), &cls, "a", &image(), AggregationKind::NoisyOr, &Default::default()).unwrap(),
        score_direct(&classifier(InputKind::WholeImage), "b", &image()).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    write_scores(&path, &scores).unwrap();
    assert_eq!(read_scores(&path).unwrap(), scores);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains("\"strategy\":\"two_stage\""));
}
