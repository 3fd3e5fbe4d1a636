//! ROI malignancy classifier and the whole-image classifier that shares its
//! architecture and training recipe.

mod convnet;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use convnet::{flip_chw, to_chw, ConvBackbone, ConvNet};
pub use train::{train_binary, EpochRecord, LabeledInput};

use crate::data::{extract_crop, DatasetManifest, Pixels, Roi, Split, DEFAULT_CROP_SIDE};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};

/// Half-period cosine decay: `base * (0.5 + 0.5 cos(pi t / t_max))`.
pub fn cosine_lr(t: usize, t_max: usize, base: f64) -> Result<f64> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be positive".into()));
    }
    if t > t_max {
        return Err(Error::Config(format!("step {t} exceeds t_max {t_max}")));
    }
    let phase = t as f64 * std::f64::consts::PI / t_max as f64;
    Ok(base * (0.5 + 0.5 * phase.cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub crop_side: u32,
    /// Random horizontal/vertical flips during training.
    pub flips: bool,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 100,
            batch_size: 64,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            crop_side: DEFAULT_CROP_SIDE,
            flips: true,
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    /// Recipe for the combined image + covariate model.
    pub fn combined_default() -> Self {
        ClassifierTrainConfig {
            epochs: 30,
            base_lr: 0.001,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if self.batch_size == 0 || self.crop_side < 4 {
            return Err(Error::Config("batch_size must be positive and crop_side >= 4".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::Config(format!("schedule factor must be positive, got {factor}")));
        }
        let scaled = ClassifierTrainConfig {
            epochs: ((self.epochs as f64 * factor).round() as usize).max(1),
            ..self.clone()
        };
        scaled.validate()?;
        Ok(scaled)
    }
}

/// Per-lesion malignancy probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalignancyScore {
    pub image_id: String,
    pub roi: Roi,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Square crops around lesion ROIs.
    RoiCrop,
    /// The whole image resampled to a square.
    WholeImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub input: InputKind,
    pub config: ClassifierTrainConfig,
    pub malignant_classes: Vec<String>,
    pub channels: Vec<usize>,
    pub training_curve: String,
}

/// A trained binary malignancy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub meta: ClassifierMeta,
    pub net: ConvNet,
    pub curve: Vec<EpochRecord>,
}

const CURVE_FILE: &str = "training_curve.csv";

impl ClassifierModel {
    pub fn side(&self) -> u32 {
        self.meta.config.crop_side
    }

    pub fn input_kind(&self) -> InputKind {
        self.meta.input
    }

    /// Network input tensor for a lesion crop.
    pub fn crop_input(&self, image: &Pixels, roi: &Roi) -> Result<Vec<f32>> {
        Ok(to_chw(&extract_crop(image, roi, self.side())?))
    }

    /// Network input tensor for a whole image.
    pub fn image_input(&self, image: &Pixels) -> Vec<f32> {
        to_chw(&image.resize(self.side(), self.side()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_json(&dir.join("model.json"), &self.meta)?;
        write_json(&dir.join("weights.json"), &self.net)?;
        let mut w = csv::Writer::from_path(dir.join(CURVE_FILE))?;
        for rec in &self.curve {
            w.serialize(rec)?;
        }
        w.flush().map_err(|e| Error::io("writing training curve", e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ClassifierMeta = read_json(&dir.join("model.json"))?;
        let net: ConvNet = read_json(&dir.join("weights.json"))?;
        let curve_path = dir.join(CURVE_FILE);
        let curve = if curve_path.exists() {
            csv::Reader::from_path(curve_path)?
                .deserialize()
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        if net.side() != meta.config.crop_side as usize {
            return Err(Error::ModelMismatch(format!(
                "weights expect side {} but metadata says {}",
                net.side(), meta.config.crop_side
            )));
        }
        Ok(ClassifierModel { meta, net, curve })
    }
}

fn malignant_names() -> Vec<String> {
    crate::data::LesionLabel::ALL
        .iter()
        .filter(|l| l.is_malignant())
        .map(|l| l.code().to_string())
        .collect()
}

/// Loads every image of `split` and hands it to `f`.
pub(crate) fn for_each_image<F>(manifest: &DatasetManifest, split: Split, mut f: F) -> Result<()>
where
    F: FnMut(&crate::data::ImageRecord, &Pixels) -> Result<()>,
{
    for record in manifest.split_records(split) {
        let pixels = Pixels::open(&manifest.resolve_path(record))?;
        f(record, &pixels)?;
    }
    Ok(())
}

fn crop_samples(manifest: &DatasetManifest, split: Split, side: u32) -> Result<Vec<LabeledInput>> {
    let mut out = Vec::new();
    for_each_image(manifest, split, |record, pixels| {
        for roi in &record.rois {
            let Some(label) = roi.label else {
                log::warn!("{}: skipping unlabeled ROI", record.image_id);
                continue;
            };
            let crop = extract_crop(pixels, roi, side)?;
            out.push(LabeledInput {
                input: to_chw(&crop),
                label: label.is_malignant(),
            });
        }
        Ok(())
    })?;
    Ok(out)
}

fn image_samples(manifest: &DatasetManifest, split: Split, side: u32) -> Result<Vec<LabeledInput>> {
    let mut out = Vec::new();
    for_each_image(manifest, split, |record, pixels| {
        out.push(LabeledInput {
            input: to_chw(&pixels.resize(side, side)),
            label: record.image_label() == 1,
        });
        Ok(())
    })?;
    Ok(out)
}

fn fit(
    input: InputKind,
    train: Vec<LabeledInput>,
    val: Vec<LabeledInput>,
    config: &ClassifierTrainConfig,
) -> Result<ClassifierModel> {
    config.validate()?;
    let positives = train.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Training(format!(
            "training set needs both malignant and benign samples ({positives} of {} malignant)",
            train.len()
        )));
    }
    let mut net = ConvNet::new(config.crop_side as usize, config.seed);
    let curve = train_binary(&mut net, &train, &val, config)?;
    Ok(ClassifierModel {
        meta: ClassifierMeta {
            input,
            config: config.clone(),
            malignant_classes: malignant_names(),
            channels: ConvNet::CHANNELS.to_vec(),
            training_curve: CURVE_FILE.into(),
        },
        net,
        curve,
    })
}

/// Trains the ROI classifier on crops of the train split. The val split, when
/// present, is scored after every epoch.
pub fn train_classifier(manifest: &DatasetManifest, config: &ClassifierTrainConfig) -> Result<ClassifierModel> {
    config.validate()?;
    let train = crop_samples(manifest, Split::Train, config.crop_side)?;
    let val = crop_samples(manifest, Split::Val, config.crop_side)?;
    fit(InputKind::RoiCrop, train, val, config)
}

/// Trains the whole-image classifier with image-level labels.
pub fn train_direct(manifest: &DatasetManifest, config: &ClassifierTrainConfig) -> Result<ClassifierModel> {
    config.validate()?;
    let train = image_samples(manifest, Split::Train, config.crop_side)?;
    let val = image_samples(manifest, Split::Val, config.crop_side)?;
    fit(InputKind::WholeImage, train, val, config)
}

/// Trains directly from prepared tensors (used by tests and bindings).
pub fn train_on_inputs(
    input: InputKind,
    train: Vec<LabeledInput>,
    val: Vec<LabeledInput>,
    config: &ClassifierTrainConfig,
) -> Result<ClassifierModel> {
    fit(input, train, val, config)
}

/// Malignancy probability of one lesion.
pub fn predict_roi(model: &ClassifierModel, image_id: &str, image: &Pixels, roi: &Roi) -> Result<MalignancyScore> {
    let x = model.crop_input(image, roi)?;
    Ok(MalignancyScore {
        image_id: image_id.to_string(),
        roi: Roi { label: None, ..*roi },
        probability: crate::nn::open_unit(model.net.probability(&x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 1000, 0.01).unwrap(), 0.01);
        assert!(cosine_lr(1000, 1000, 0.01).unwrap().abs() < 1e-18);
        assert!((cosine_lr(500, 1000, 0.01).unwrap() - 0.005).abs() < 1e-17);
        assert!(cosine_lr(1001, 1000, 0.01).is_err());
        assert!(cosine_lr(0, 0, 0.01).is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = ClassifierTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(ClassifierTrainConfig::default().scaled(0.1).unwrap().epochs, 10);
    }

    #[test]
    fn single_class_training_rejected() {
        let cfg = ClassifierTrainConfig {
            crop_side: 8,
            epochs: 1,
            ..Default::default()
        };
        let samples = vec![
            LabeledInput {
                input: vec![0.0; 3 * 64],
                label: true,
            };
            3
        ];
        assert!(matches!(
            train_on_inputs(InputKind::RoiCrop, samples, vec![], &cfg),
            Err(Error::Training(_))
        ));
    }
}
