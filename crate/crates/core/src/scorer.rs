//! Image-level malignancy scores: direct whole-image classification, the
//! two-stage detect-then-classify pipeline, and one-step scoring straight
//! from a multi-class detector, with permutation-invariant aggregation over
//! the lesions found in an image.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_roi, ClassifierModel, InputKind};
use crate::data::{Pixels, Roi};
use crate::detector::{DetectorBackend, Granularity};
use crate::error::{Error, Result};
use crate::io_util::{from_json_lines, to_json_lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Average,
    Maximum,
    NoisyOr,
}

impl AggregationKind {
    pub const ALL: [AggregationKind; 3] = [AggregationKind::Average, AggregationKind::Maximum, AggregationKind::NoisyOr];

    pub fn name(self) -> &'static str {
        match self {
            AggregationKind::Average => "average",
            AggregationKind::Maximum => "maximum",
            AggregationKind::NoisyOr => "noisy_or",
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "average" | "avg" | "mean" => Ok(AggregationKind::Average),
            "maximum" | "max" => Ok(AggregationKind::Maximum),
            "noisy_or" => Ok(AggregationKind::NoisyOr),
            _ => Err(Error::InvalidInput(format!("unknown aggregator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Direct,
    TwoStage,
    OneStepMalignancy,
    OneStepSubtype,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Direct,
        StrategyKind::TwoStage,
        StrategyKind::OneStepMalignancy,
        StrategyKind::OneStepSubtype,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Direct => "direct",
            StrategyKind::TwoStage => "two_stage",
            StrategyKind::OneStepMalignancy => "one_step_malignancy",
            StrategyKind::OneStepSubtype => "one_step_subtype",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy {s:?}")))
    }
}

/// Noisy-OR variant. `Standard` is `1 - prod(1 - p)`; `Verbatim` is
/// `1 - prod(p)`, which falls as lesions look more malignant and is kept only
/// for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisyOrMode {
    #[default]
    Standard,
    Verbatim,
}

/// Image probability when the detector finds nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum EmptyPolicy {
    Benign,
    Malignant,
    Fixed(f64),
}

impl Default for EmptyPolicy {
    fn default() -> Self {
        EmptyPolicy::Benign
    }
}

impl EmptyPolicy {
    pub fn probability(self) -> Result<f64> {
        match self {
            EmptyPolicy::Benign => Ok(0.0),
            EmptyPolicy::Malignant => Ok(1.0),
            EmptyPolicy::Fixed(p) if (0.0..=1.0).contains(&p) => Ok(p),
            EmptyPolicy::Fixed(p) => Err(Error::Config(format!("empty-detection probability {p} outside [0, 1]"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub noisy_or: NoisyOrMode,
    pub empty: EmptyPolicy,
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("cannot aggregate an empty probability list".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Aggregates per-lesion probabilities with the standard noisy-OR.
pub fn aggregate(probs: &[f64], kind: AggregationKind) -> Result<f64> {
    aggregate_with(probs, kind, NoisyOrMode::Standard)
}

pub fn aggregate_with(probs: &[f64], kind: AggregationKind, mode: NoisyOrMode) -> Result<f64> {
    check_probs(probs)?;
    Ok(match (kind, mode) {
        (AggregationKind::Average, _) => probs.iter().sum::<f64>() / probs.len() as f64,
        (AggregationKind::Maximum, _) => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        // A lone lesion is returned as is rather than through 1 - (1 - p),
        // which is not exact in floating point.
        (AggregationKind::NoisyOr, NoisyOrMode::Standard) if probs.len() == 1 => probs[0],
        (AggregationKind::NoisyOr, NoisyOrMode::Standard) => 1.0 - probs.iter().map(|p| 1.0 - p).product::<f64>(),
        (AggregationKind::NoisyOr, NoisyOrMode::Verbatim) => 1.0 - probs.iter().product::<f64>(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    #[serde(rename = "box")]
    pub roi: Roi,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub probability: f64,
    pub strategy: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<AggregationKind>,
    #[serde(default)]
    pub contributing: Vec<Contribution>,
}

impl ImageScore {
    /// Re-aggregates the stored per-lesion probabilities, so one detection
    /// pass can serve every aggregator.
    pub fn reaggregate(&self, kind: AggregationKind, options: &ScoringOptions) -> Result<ImageScore> {
        if self.strategy == StrategyKind::Direct {
            return Err(Error::InvalidInput("direct scores have no lesions to aggregate".into()));
        }
        let probs: Vec<f64> = self.contributing.iter().map(|c| c.probability).collect();
        Ok(ImageScore {
            probability: aggregate_or_empty(&probs, kind, options)?,
            aggregator: Some(kind),
            ..self.clone()
        })
    }
}

fn aggregate_or_empty(probs: &[f64], kind: AggregationKind, options: &ScoringOptions) -> Result<f64> {
    if probs.is_empty() {
        options.empty.probability()
    } else {
        aggregate_with(probs, kind, options.noisy_or)
    }
}

fn finish(
    image_id: &str,
    strategy: StrategyKind,
    kind: AggregationKind,
    contributing: Vec<Contribution>,
    options: &ScoringOptions,
) -> Result<ImageScore> {
    let probs: Vec<f64> = contributing.iter().map(|c| c.probability).collect();
    Ok(ImageScore {
        image_id: image_id.to_string(),
        probability: aggregate_or_empty(&probs, kind, options)?,
        strategy,
        aggregator: Some(kind),
        contributing,
    })
}

/// Detects lesions with a one-class detector, classifies each detected box
/// and aggregates.
pub fn score_two_stage<D: DetectorBackend + ?Sized>(
    detector: &D,
    classifier: &ClassifierModel,
    image_id: &str,
    image: &Pixels,
    kind: AggregationKind,
    options: &ScoringOptions,
) -> Result<ImageScore> {
    if detector.granularity() != Granularity::OneClass {
        return Err(Error::ModelMismatch(format!(
            "two-stage scoring needs a one-class detector, got {:?}",
            detector.granularity()
        )));
    }
    if classifier.input_kind() != InputKind::RoiCrop {
        return Err(Error::ModelMismatch("two-stage scoring needs an ROI classifier".into()));
    }
    let contributing = detector
        .detect(image_id, image)?
        .iter()
        .map(|d| {
            predict_roi(classifier, image_id, image, &d.roi).map(|s| Contribution {
                roi: s.roi,
                probability: s.probability,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(image_id, StrategyKind::TwoStage, kind, contributing, options)
}

/// Scores straight from a malignancy or sub-type detector: each detection's
/// malignant probability mass is aggregated.
pub fn score_one_step<D: DetectorBackend + ?Sized>(
    detector: &D,
    image_id: &str,
    image: &Pixels,
    kind: AggregationKind,
    options: &ScoringOptions,
) -> Result<ImageScore> {
    let granularity = detector.granularity();
    let strategy = match granularity {
        Granularity::Malignancy => StrategyKind::OneStepMalignancy,
        Granularity::SubType => StrategyKind::OneStepSubtype,
        Granularity::OneClass => {
            return Err(Error::ModelMismatch(
                "a one-class detector carries no malignancy signal for one-step scoring".into(),
            ))
        }
    };
    let contributing = detector
        .detect(image_id, image)?
        .into_iter()
        .map(|d| {
            let p = granularity.malignant_mass(&d.class_probs).ok_or_else(|| {
                Error::ModelMismatch(format!("detection has {} class probabilities", d.class_probs.len()))
            })?;
            Ok(Contribution {
                roi: d.roi,
                probability: p.clamp(0.0, 1.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(image_id, strategy, kind, contributing, options)
}

/// Whole-image classifier score.
pub fn score_direct(model: &ClassifierModel, image_id: &str, image: &Pixels) -> Result<ImageScore> {
    if model.input_kind() != InputKind::WholeImage {
        return Err(Error::ModelMismatch("direct scoring needs a whole-image classifier".into()));
    }
    let p = crate::nn::open_unit(model.net.probability(&model.image_input(image)));
    Ok(ImageScore {
        image_id: image_id.to_string(),
        probability: p,
        strategy: StrategyKind::Direct,
        aggregator: None,
        contributing: Vec::new(),
    })
}

pub fn write_scores(path: &Path, scores: &[ImageScore]) -> Result<()> {
    std::fs::write(path, to_json_lines(scores)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ImageScore>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_json_lines(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregator_examples() {
        assert!((aggregate(&[0.2, 0.4], AggregationKind::Average).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(aggregate(&[0.2, 0.4], AggregationKind::Maximum).unwrap(), 0.4);
        assert_eq!(aggregate(&[0.5, 0.5], AggregationKind::NoisyOr).unwrap(), 0.75);
        assert_eq!(
            aggregate_with(&[0.5, 0.5], AggregationKind::NoisyOr, NoisyOrMode::Verbatim).unwrap(),
            0.75
        );
        assert!((aggregate_with(&[0.9, 0.9], AggregationKind::NoisyOr, NoisyOrMode::Verbatim).unwrap() - 0.19).abs() < 1e-12);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(aggregate(&[], AggregationKind::Maximum).is_err());
        assert!(aggregate(&[1.5], AggregationKind::Maximum).is_err());
    }

    #[test]
    fn empty_policy_values() {
        assert_eq!(EmptyPolicy::default().probability().unwrap(), 0.0);
        assert_eq!(EmptyPolicy::Malignant.probability().unwrap(), 1.0);
        assert!(EmptyPolicy::Fixed(2.0).probability().is_err());
    }

    #[test]
    fn reaggregate_empty_uses_policy() {
        let s = ImageScore {
            image_id: "a".into(),
            probability: 0.0,
            strategy: StrategyKind::TwoStage,
            aggregator: Some(AggregationKind::Maximum),
            contributing: vec![],
        };
        let opts = ScoringOptions {
            empty: EmptyPolicy::Fixed(0.3),
            ..Default::default()
        };
        assert_eq!(s.reaggregate(AggregationKind::NoisyOr, &opts).unwrap().probability, 0.3);
    }

    #[test]
    fn names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        for k in AggregationKind::ALL {
            assert_eq!(k.name().parse::<AggregationKind>().unwrap(), k);
        }
    }
}
