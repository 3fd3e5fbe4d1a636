use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{encode_covariates, encoded_len, fit_standardizer, mean_std, StandardizationStats};
use super::schema::{CovariateRow, CovariateSchema};
use crate::classifier::{
    cosine_lr, for_each_image, to_chw, ClassifierModel, ClassifierTrainConfig, ConvBackbone, EpochRecord,
};
use crate::data::{DatasetManifest, Pixels, Split};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::metrics::{auc, ScoredLabel};
use crate::nn::{bce_with_logit, open_unit, sigmoid, Dense, Sgd};

/// Image features from a frozen classifier backbone concatenated with
/// encoded covariates, fed through one trainable sigmoid unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedModel {
    pub config: ClassifierTrainConfig,
    pub backbone: ConvBackbone,
    /// Mean and standard deviation of each backbone feature on the
    /// training images.
    pub feature_norm: Vec<(f64, f64)>,
    pub schema: CovariateSchema,
    pub covariate_stats: StandardizationStats,
    pub fused: Dense,
    pub curve: Vec<EpochRecord>,
}

/// Contributions to the fused logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitParts {
    pub image: f64,
    pub covariates: f64,
    pub bias: f64,
}

impl LogitParts {
    pub fn total(&self) -> f64 {
        self.image + self.covariates + self.bias
    }
}

impl CombinedModel {
    pub fn trainable_parameter_count(&self) -> usize {
        self.fused.num_params()
    }

    pub fn frozen_parameter_count(&self) -> usize {
        self.backbone.num_params()
    }

    fn image_features(&self, image: &Pixels) -> Vec<f64> {
        let side = self.config.crop_side;
        let raw = self.backbone.features(&to_chw(&image.resize(side, side)));
        raw.iter()
            .zip(&self.feature_norm)
            .map(|(&v, &(m, s))| (f64::from(v) - m) / s)
            .collect()
    }

    fn input(&self, image: &Pixels, row: &CovariateRow) -> Result<(Vec<f64>, usize)> {
        let mut x = self.image_features(image);
        let split = x.len();
        x.extend(encode_covariates(row, &self.schema, &self.covariate_stats)?.0);
        Ok((x, split))
    }

    /// Splits the fused logit into its image and covariate terms.
    pub fn logit_parts(&self, image: &Pixels, row: &CovariateRow) -> Result<LogitParts> {
        let (x, split) = self.input(image, row)?;
        let w = &self.fused.weight;
        let term = |range: std::ops::Range<usize>| {
            range.map(|i| f64::from(w[i]) * x[i]).sum::<f64>()
        };
        Ok(LogitParts {
            image: term(0..split),
            covariates: term(split..x.len()),
            bias: f64::from(self.fused.bias[0]),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_json(&dir.join("combined.json"), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join("combined.json"))
    }
}

/// Malignancy probability from image pixels and the image's covariates.
pub fn predict_combined(model: &CombinedModel, image: &Pixels, row: &CovariateRow) -> Result<f64> {
    Ok(open_unit(sigmoid(model.logit_parts(image, row)?.total())))
}

struct Sample {
    x: Vec<f32>,
    label: bool,
}

/// Trains only the fused layer on top of the classifier's frozen conv
/// layers. Images without a covariate row are excluded with a warning.
pub fn train_combined(
    cls_model: &ClassifierModel,
    manifest: &DatasetManifest,
    rows: &[CovariateRow],
    schema: &CovariateSchema,
    config: &ClassifierTrainConfig,
) -> Result<CombinedModel> {
    config.validate()?;
    schema.validate()?;
    let config = ClassifierTrainConfig {
        crop_side: cls_model.side(),
        ..config.clone()
    };
    let by_id: HashMap<&str, &CovariateRow> = rows.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let backbone = cls_model.net.backbone.clone();

    let gather = |split: Split| -> Result<Vec<(Vec<f32>, &CovariateRow, bool)>> {
        let mut out = Vec::new();
        let side = config.crop_side;
        for_each_image(manifest, split, |record, pixels| {
            match by_id.get(record.image_id.as_str()) {
                Some(row) => {
                    let feats = backbone.features(&to_chw(&pixels.resize(side, side)));
                    out.push((feats, *row, record.image_label() == 1));
                }
                None => log::warn!("{}: no covariate row, excluded", record.image_id),
            }
            Ok(())
        })?;
        Ok(out)
    };
    let train = gather(Split::Train)?;
    if train.is_empty() {
        return Err(Error::Training("no training image has a covariate row".into()));
    }
    let val = gather(Split::Val)?;

    let train_rows: Vec<CovariateRow> = train.iter().map(|(_, r, _)| (*r).clone()).collect();
    let covariate_stats = fit_standardizer(&train_rows, schema)?;
    let feat_dim = backbone.feature_dim();
    let feature_norm: Vec<(f64, f64)> = (0..feat_dim)
        .map(|j| {
            let col: Vec<f64> = train.iter().map(|(f, _, _)| f64::from(f[j])).collect();
            let (m, s) = mean_std(&col);
            (m, if s > 1e-9 { s } else { 1.0 })
        })
        .collect();

    let to_sample = |(feats, row, label): &(Vec<f32>, &CovariateRow, bool)| -> Result<Sample> {
        let mut x: Vec<f32> = feats
            .iter()
            .zip(&feature_norm)
            .map(|(&v, &(m, s))| ((f64::from(v) - m) / s) as f32)
            .collect();
        x.extend(
            encode_covariates(row, schema, &covariate_stats)?
                .0
                .iter()
                .map(|&v| v as f32),
        );
        Ok(Sample { x, label: *label })
    };
    let train_s: Vec<Sample> = train.iter().map(to_sample).collect::<Result<_>>()?;
    let val_s: Vec<Sample> = val.iter().map(to_sample).collect::<Result<_>>()?;
    let positives = train_s.iter().filter(|s| s.label).count();
    if positives == 0 || positives == train_s.len() {
        return Err(Error::Training("combined model needs both classes in training".into()));
    }

    let inputs = feat_dim + encoded_len(schema, &covariate_stats);
    let mut fused = Dense::zeros(inputs, 1);
    let mut opt = Sgd::new(fused.num_params(), config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc0b1);
    let mut order: Vec<usize> = (0..train_s.len()).collect();
    let total_steps = train_s.len().div_ceil(config.batch_size) * config.epochs;
    let mut step = 0;
    let mut curve = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0f32; fused.num_params()];
            for &i in batch {
                let s = &train_s[i];
                let mut z = [0.0f32];
                fused.forward(&s.x, &mut z);
                let target = if s.label { 1.0 } else { 0.0 };
                loss_sum += bce_with_logit(f64::from(z[0]), target);
                let d = (sigmoid(f64::from(z[0])) - target) as f32;
                fused.backward(&s.x, &[d], &mut grad, None);
            }
            grad.iter_mut().for_each(|g| *g /= batch.len() as f32);
            let lr = cosine_lr(step, total_steps, config.base_lr)?;
            opt.step_layer(&mut fused.weight, &mut fused.bias, &grad, lr);
            step += 1;
        }
        let val_auc = if val_s.is_empty() {
            None
        } else {
            let pairs: Vec<ScoredLabel> = val_s
                .iter()
                .map(|s| {
                    let mut z = [0.0f32];
                    fused.forward(&s.x, &mut z);
                    ScoredLabel::new(f64::from(z[0]), s.label)
                })
                .collect();
            auc(&pairs).ok()
        };
        curve.push(EpochRecord {
            epoch,
            loss: loss_sum / train_s.len() as f64,
            val_auc,
        });
    }

    Ok(CombinedModel {
        config,
        backbone,
        feature_norm,
        schema: schema.clone(),
        covariate_stats,
        fused,
        curve,
    })
}
