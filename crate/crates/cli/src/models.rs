use std::path::Path;

use dermtriage::classifier::{ClassifierModel, InputKind};
use dermtriage::clinical::CombinedModel;
use dermtriage::detector::{DetectorModel, Granularity};
use dermtriage::pipeline::ModelSet;
use dermtriage::scorer::{EmptyPolicy, NoisyOrMode, ScoringOptions, StrategyKind};
use dermtriage::{Error, Result};
use serde_json::json;

use crate::args::ModelArgs;

/// Every model named on the command line, loaded and checked for the role it
/// was given.
pub struct LoadedModels {
    pub detector: Option<DetectorModel>,
    pub classifier: Option<ClassifierModel>,
    pub direct: Option<ClassifierModel>,
    pub malignancy: Option<DetectorModel>,
    pub subtype: Option<DetectorModel>,
    pub combined: Option<CombinedModel>,
    pub options: ScoringOptions,
}

fn detector(dir: &Option<impl AsRef<Path>>, want: Granularity) -> Result<Option<DetectorModel>> {
    let Some(dir) = dir else { return Ok(None) };
    let model = DetectorModel::load(dir.as_ref())?;
    if model.granularity() != want {
        return Err(Error::ModelMismatch(format!(
            "{} holds a {} detector, expected {want}",
            dir.as_ref().display(),
            model.granularity()
        )));
    }
    Ok(Some(model))
}

fn classifier(dir: &Option<impl AsRef<Path>>, want: InputKind) -> Result<Option<ClassifierModel>> {
    let Some(dir) = dir else { return Ok(None) };
    let model = ClassifierModel::load(dir.as_ref())?;
    if model.input_kind() != want {
        return Err(Error::ModelMismatch(format!(
            "{} holds a {:?} classifier, expected {want:?}",
            dir.as_ref().display(),
            model.input_kind()
        )));
    }
    Ok(Some(model))
}

pub fn scoring_options(args: &ModelArgs) -> Result<ScoringOptions> {
    let empty = match args.empty_probability {
        None => EmptyPolicy::Benign,
        Some(p) => {
            let policy = EmptyPolicy::Fixed(p);
            policy.probability().map_err(|e| Error::Config(e.to_string()))?;
            policy
        }
    };
    Ok(ScoringOptions {
        noisy_or: if args.verbatim_noisy_or {
            NoisyOrMode::Verbatim
        } else {
            NoisyOrMode::Standard
        },
        empty,
    })
}

impl LoadedModels {
    pub fn load(args: &ModelArgs) -> Result<Self> {
        Ok(LoadedModels {
            detector: detector(&args.detector, Granularity::OneClass)?,
            classifier: classifier(&args.classifier, InputKind::RoiCrop)?,
            direct: classifier(&args.direct, InputKind::WholeImage)?,
            malignancy: detector(&args.malignancy_detector, Granularity::Malignancy)?,
            subtype: detector(&args.subtype_detector, Granularity::SubType)?,
            combined: args.combined.as_ref().map(|d| CombinedModel::load(d)).transpose()?,
            options: scoring_options(args)?,
        })
    }

    pub fn set(&self) -> ModelSet<'_> {
        ModelSet {
            direct: self.direct.as_ref(),
            one_class: self.detector.as_ref().map(|d| d as _),
            roi_classifier: self.classifier.as_ref(),
            malignancy: self.malignancy.as_ref().map(|d| d as _),
            subtype: self.subtype.as_ref().map(|d| d as _),
        }
    }

    /// Strategies whose models are all present.
    pub fn available(&self) -> Vec<StrategyKind> {
        StrategyKind::ALL
            .into_iter()
            .filter(|s| match s {
                StrategyKind::Direct => self.direct.is_some(),
                StrategyKind::TwoStage => self.detector.is_some() && self.classifier.is_some(),
                StrategyKind::OneStepMalignancy => self.malignancy.is_some(),
                StrategyKind::OneStepSubtype => self.subtype.is_some(),
            })
            .collect()
    }

    pub fn info(&self) -> serde_json::Value {
        let det = |m: &Option<DetectorModel>| m.as_ref().map(|m| json!(m.meta));
        let cls = |m: &Option<ClassifierModel>| m.as_ref().map(|m| json!(m.meta));
        json!({
            "strategies": self.available(),
            "aggregators": dermtriage::scorer::AggregationKind::ALL,
            "scoring_options": self.options,
            "detector": det(&self.detector),
            "classifier": cls(&self.classifier),
            "direct": cls(&self.direct),
            "malignancy_detector": det(&self.malignancy),
            "subtype_detector": det(&self.subtype),
            "combined": self.combined.as_ref().map(|m| json!({
                "config": m.config,
                "schema": m.schema,
                "trainable_parameters": m.trainable_parameter_count(),
                "frozen_parameters": m.frozen_parameter_count(),
            })),
        })
    }
}
