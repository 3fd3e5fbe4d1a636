use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LesionLabel, Roi};
use crate::error::{Error, Result};
use crate::metrics::ScoredBox;

/// Label granularity of a detector head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One class: any lesion.
    OneClass,
    /// Benign vs malignant.
    Malignancy,
    /// The eight lesion types.
    SubType,
}

impl Granularity {
    pub fn num_classes(self) -> usize {
        match self {
            Granularity::OneClass => 1,
            Granularity::Malignancy => 2,
            Granularity::SubType => 8,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Granularity::OneClass => vec!["lesion".into()],
            Granularity::Malignancy => vec!["benign".into(), "malignant".into()],
            Granularity::SubType => LesionLabel::ALL.iter().map(|l| l.code().to_string()).collect(),
        }
    }

    /// Class index for a ground-truth ROI label.
    pub fn class_of(self, label: Option<LesionLabel>) -> Result<usize> {
        match (self, label) {
            (Granularity::OneClass, _) => Ok(0),
            (Granularity::Malignancy, Some(l)) => Ok(usize::from(l.is_malignant())),
            (Granularity::SubType, Some(l)) => Ok(l.index()),
            (g, None) => Err(Error::Training(format!(
                "ROI without a label cannot be assigned a class under {g:?} granularity"
            ))),
        }
    }

    /// Probability mass a detection assigns to the malignant set, or `None`
    /// for one-class heads which carry no malignancy signal.
    pub fn malignant_mass(self, class_probs: &[f64]) -> Option<f64> {
        match self {
            Granularity::OneClass => None,
            Granularity::Malignancy => class_probs.get(1).copied(),
            Granularity::SubType => Some(
                LesionLabel::ALL
                    .iter()
                    .filter(|l| l.is_malignant())
                    .filter_map(|l| class_probs.get(l.index()))
                    .sum(),
            ),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::OneClass => "one_class",
            Granularity::Malignancy => "malignancy",
            Granularity::SubType => "sub_type",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "one_class" | "lesion" => Ok(Granularity::OneClass),
            "malignancy" => Ok(Granularity::Malignancy),
            "sub_type" | "subtype" => Ok(Granularity::SubType),
            _ => Err(Error::InvalidInput(format!("unknown granularity {s:?}"))),
        }
    }
}

/// Granularity plus its ordered class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranularityConfig {
    pub kind: Granularity,
    pub class_names: Vec<String>,
}

impl GranularityConfig {
    pub fn new(kind: Granularity) -> Self {
        GranularityConfig {
            kind,
            class_names: kind.class_names(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names != self.kind.class_names() {
            return Err(Error::Config(format!(
                "class names {:?} do not match {:?} granularity",
                self.class_names, self.kind
            )));
        }
        Ok(())
    }
}

/// One predicted lesion box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub roi: Roi,
    pub class_probs: Vec<f64>,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, roi: Roi, class_probs: Vec<f64>) -> Self {
        let score = class_probs.iter().copied().fold(0.0, f64::max);
        Detection {
            image_id: image_id.into(),
            roi,
            class_probs,
            score,
        }
    }

    pub fn scored_box(&self) -> ScoredBox {
        ScoredBox::new(self.roi, self.score)
    }
}

/// Optimizer and post-processing settings for detector training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub total_steps: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Steps at which the learning rate is multiplied by `decay_factor`.
    pub decay_steps: Vec<usize>,
    pub decay_factor: f64,
    /// Anchors sampled per training step (the proposal minibatch).
    pub rpn_batch: usize,
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            total_steps: 80_000,
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_steps: vec![60_000, 80_000],
            decay_factor: 0.1,
            rpn_batch: 512,
            nms_iou: 0.5,
            score_threshold: 0.5,
            max_detections: 100,
            seed: 0,
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.decay_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("decay_steps must be strictly increasing".into()));
        }
        if self.decay_steps.last().is_some_and(|&s| s > self.total_steps) {
            return Err(Error::Config("decay_steps must not exceed total_steps".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) || !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config("nms_iou and score_threshold must lie in [0, 1]".into()));
        }
        if self.rpn_batch == 0 {
            return Err(Error::Config("rpn_batch must be positive".into()));
        }
        Ok(())
    }

    /// Scales the step count and decay breakpoints by `factor`, leaving every
    /// other setting untouched.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Config(format!("schedule factor must be positive, got {factor}")));
        }
        let scale = |s: usize| ((s as f64 * factor).round() as usize).max(1);
        let scaled = DetectorTrainConfig {
            total_steps: scale(self.total_steps),
            decay_steps: self.decay_steps.iter().map(|&s| scale(s)).collect(),
            ..self.clone()
        };
        scaled.validate()?;
        Ok(scaled)
    }

    /// Step-decay learning rate.
    pub fn lr_at(&self, step: usize) -> f64 {
        let decays = self.decay_steps.iter().filter(|&&s| step >= s).count();
        self.base_lr * self.decay_factor.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn granularity_classes() {
        assert_eq!(Granularity::OneClass.class_of(None).unwrap(), 0);
        assert_eq!(Granularity::OneClass.class_of(Some(LesionLabel::Bcc)).unwrap(), 0);
        assert_eq!(Granularity::Malignancy.class_of(Some(LesionLabel::Bcc)).unwrap(), 1);
        assert_eq!(Granularity::Malignancy.class_of(Some(LesionLabel::Ob)).unwrap(), 0);
        assert_eq!(Granularity::SubType.class_of(Some(LesionLabel::Vasc)).unwrap(), 6);
        assert!(Granularity::SubType.class_of(None).is_err());
        let names = Granularity::SubType.class_names();
        assert_eq!(names[0], "MEL");
        assert_eq!(names.len(), 8);
        GranularityConfig::new(Granularity::Malignancy).validate().unwrap();
    }

    #[test]
    fn malignant_mass_sums_over_malignant_set() {
        // MEL 0.2, NV 0.3, BCC 0.1, AKIEC 0.1, rest 0.3
        let probs = [0.2, 0.3, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05];
        let mass = Granularity::SubType.malignant_mass(&probs).unwrap();
        assert!((mass - 0.4).abs() < 1e-12);
        assert_eq!(Granularity::Malignancy.malignant_mass(&[0.3, 0.7]), Some(0.7));
        assert_eq!(Granularity::OneClass.malignant_mass(&[0.9]), None);
    }

    #[test]
    fn step_schedule() {
        let cfg = DetectorTrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(59_999), 1e-3);
        assert!((cfg.lr_at(60_000) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(79_999) - 1e-4).abs() < 1e-18);

        let small = cfg.scaled(0.025).unwrap();
        assert_eq!(small.total_steps, 2_000);
        assert_eq!(small.decay_steps, [1_500, 2_000]);
        assert_eq!(small.lr_at(1_499), 1e-3);
        assert!((small.lr_at(1_500) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DetectorTrainConfig::default();
        cfg.decay_steps = vec![80_000, 60_000];
        assert!(cfg.validate().is_err());
        cfg.decay_steps = vec![60_000, 90_000];
        assert!(cfg.validate().is_err());
    }
}
