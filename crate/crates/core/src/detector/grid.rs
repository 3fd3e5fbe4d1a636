//! Anchor-per-cell detector: a small MLP over [`CellGrid`] features predicts
//! objectness, a box offset relative to a fixed-size anchor centred on the
//! cell, and (for multi-class granularities) a class distribution.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{CellGrid, FEATURE_DIM, STRIDE};
use super::{nms, Detection, DetectorBackend, DetectorTrainConfig, Granularity, GranularityConfig};
use crate::data::{DatasetManifest, Pixels, Roi, Split};
use crate::error::{Error, Result};
use crate::io_util::{read_json, write_json};
use crate::nn::{bce_with_logit, open_unit, sigmoid, Dense, Sgd};

pub const BACKEND_NAME: &str = "grid_mlp";
pub const ANCHOR_SIZE: f64 = 32.0;
const HIDDEN: usize = 64;
const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
const MAX_LOG_SCALE: f64 = 4.0;
const CHUNK: usize = 64;

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMeta {
    pub backend: String,
    pub granularity: GranularityConfig,
    pub config: DetectorTrainConfig,
    pub stride: u32,
    pub anchor_size: f64,
    pub hidden: usize,
    pub feature_dim: usize,
    /// How `class_probs` relate to the heads, e.g. objectness times softmax.
    pub probability_convention: String,
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
    pub training_log: Option<PathBuf>,
    pub train_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Weights {
    l1: Dense,
    l2: Dense,
    head: Dense,
}

/// One row of the per-step training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub objectness: f64,
    pub box_regression: f64,
    pub classification: f64,
    pub positives: usize,
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub meta: DetectorMeta,
    weights: Weights,
    pub log: Vec<StepRecord>,
}

/// Everything computed at one cell during inference.
struct CellOutput {
    roi: Roi,
    class_probs: Vec<f64>,
    hidden: Vec<f32>,
}

struct Forward {
    h1: Vec<f32>,
    h2: Vec<f32>,
    out: Vec<f32>,
}

fn relu(v: &mut [f32]) {
    for x in v {
        *x = x.max(0.0);
    }
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f64> = logits.iter().map(|&l| f64::from(l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < SMOOTH_L1_BETA {
        (0.5 * d * d / SMOOTH_L1_BETA, d / SMOOTH_L1_BETA)
    } else {
        (d.abs() - 0.5 * SMOOTH_L1_BETA, d.signum())
    }
}

fn head_outputs(num_classes: usize) -> usize {
    5 + if num_classes > 1 { num_classes } else { 0 }
}

impl DetectorModel {
    pub fn granularity(&self) -> Granularity {
        self.meta.granularity.kind
    }

    pub fn num_classes(&self) -> usize {
        self.meta.granularity.kind.num_classes()
    }

    /// Length of the vectors returned by `export_features`.
    pub fn feature_len(&self) -> usize {
        self.meta.hidden
    }

    fn standardize(&self, raw: &mut [f32]) {
        for ((v, m), s) in raw.iter_mut().zip(&self.meta.feature_mean).zip(&self.meta.feature_std) {
            *v = (*v - m) / s;
        }
    }

    fn forward(&self, x: &[f32]) -> Forward {
        let w = &self.weights;
        let mut h1 = vec![0.0; w.l1.outputs];
        w.l1.forward(x, &mut h1);
        relu(&mut h1);
        let mut h2 = vec![0.0; w.l2.outputs];
        w.l2.forward(&h1, &mut h2);
        relu(&mut h2);
        let mut out = vec![0.0; w.head.outputs];
        w.head.forward(&h2, &mut out);
        Forward { h1, h2, out }
    }

    fn decode(&self, grid: &CellGrid, col: usize, row: usize, out: &[f32]) -> (Roi, Vec<f64>) {
        let (cx, cy) = grid.center(col, row);
        let a = self.meta.anchor_size;
        let bx = cx + f64::from(out[1]) * a;
        let by = cy + f64::from(out[2]) * a;
        let bw = a * f64::from(out[3]).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        let bh = a * f64::from(out[4]).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
        let obj = open_unit(sigmoid(f64::from(out[0])));
        let probs = if self.num_classes() == 1 {
            vec![obj]
        } else {
            softmax(&out[5..]).into_iter().map(|p| (obj * p).max(1e-12)).collect()
        };
        (Roi::new(bx, by, bw, bh), probs)
    }

    /// Runs the network over every cell; cells whose box falls entirely
    /// outside the frame are dropped.
    fn cell_outputs(&self, image: &Pixels, min_score: f64) -> Vec<CellOutput> {
        let grid = CellGrid::new(image);
        (0..grid.len())
            .into_par_iter()
            .filter_map(|i| {
                let (col, row) = (i % grid.cols, i / grid.cols);
                let mut x = vec![0.0; FEATURE_DIM];
                grid.features(col, row, &mut x);
                self.standardize(&mut x);
                let fwd = self.forward(&x);
                let (roi, class_probs) = self.decode(&grid, col, row, &fwd.out);
                let score = class_probs.iter().copied().fold(0.0, f64::max);
                if score < min_score {
                    return None;
                }
                let roi = roi.clamp_to(image.width(), image.height()).ok()?;
                Some(CellOutput {
                    roi,
                    class_probs,
                    hidden: fwd.h2,
                })
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut meta = self.meta.clone();
        if !self.log.is_empty() {
            let path = dir.join(TRAINING_LOG_FILE);
            let mut writer = csv::Writer::from_path(&path)?;
            for row in &self.log {
                writer.serialize(row)?;
            }
            writer.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            meta.training_log = Some(PathBuf::from(TRAINING_LOG_FILE));
        }
        write_json(&dir.join(MODEL_FILE), &meta)?;
        write_json(&dir.join(WEIGHTS_FILE), &self.weights)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DetectorMeta = read_json(&dir.join(MODEL_FILE))?;
        if meta.backend != BACKEND_NAME {
            return Err(Error::ModelMismatch(format!("unsupported detector backend {:?}", meta.backend)));
        }
        meta.granularity.validate()?;
        let weights: Weights = read_json(&dir.join(WEIGHTS_FILE))?;
        let expected = (
            meta.feature_dim,
            meta.hidden,
            head_outputs(meta.granularity.kind.num_classes()),
        );
        if meta.feature_dim != FEATURE_DIM
            || meta.feature_mean.len() != FEATURE_DIM
            || meta.feature_std.len() != FEATURE_DIM
            || (weights.l1.inputs, weights.l2.outputs, weights.head.outputs) != expected
        {
            return Err(Error::ModelMismatch(format!("{}: weight shapes do not match metadata", dir.display())));
        }
        Ok(DetectorModel {
            meta,
            weights,
            log: Vec::new(),
        })
    }
}

impl DetectorBackend for DetectorModel {
    fn granularity(&self) -> Granularity {
        self.meta.granularity.kind
    }

    fn detect(&self, image_id: &str, image: &Pixels) -> Result<Vec<Detection>> {
        let cfg = &self.meta.config;
        let candidates: Vec<Detection> = self
            .cell_outputs(image, cfg.score_threshold)
            .into_iter()
            .map(|c| Detection::new(image_id, c.roi, c.class_probs))
            .collect();
        let mut kept = nms(&candidates, cfg.nms_iou);
        kept.truncate(cfg.max_detections);
        Ok(kept)
    }

    fn export_features(&self, image: &Pixels, detections: &[Detection]) -> Result<Vec<Vec<f32>>> {
        if detections.is_empty() {
            return Ok(Vec::new());
        }
        let c = self.num_classes();
        if let Some(d) = detections.iter().find(|d| d.class_probs.len() != c) {
            return Err(Error::ModelMismatch(format!(
                "detection on {} has {} class probabilities, model has {c}",
                d.image_id,
                d.class_probs.len()
            )));
        }
        let min_score = detections.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
        let cells = self.cell_outputs(image, min_score);
        detections
            .iter()
            .map(|d| {
                cells
                    .iter()
                    .find(|cell| {
                        cell.roi == d.roi
                            && cell
                                .class_probs
                                .iter()
                                .zip(&d.class_probs)
                                .all(|(a, b)| (a - b).abs() <= 1e-9)
                    })
                    .map(|cell| cell.hidden.clone())
                    .ok_or_else(|| {
                        Error::ModelMismatch(format!(
                            "detection on {} was not produced by this model on this image",
                            d.image_id
                        ))
                    })
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Target {
    Negative,
    Positive(usize),
}

struct TrainImage {
    grid: CellGrid,
    targets: Vec<Target>,
    /// `(box, class)` per ground-truth lesion.
    boxes: Vec<(Roi, usize)>,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

/// Cells whose centre lies near a lesion centre are positives for that
/// lesion; everything else, including the outer part of a lesion, is
/// negative so that objectness peaks at lesion centres.
fn assign_targets(grid: &CellGrid, boxes: &[(Roi, usize)]) -> Vec<Target> {
    let mut targets = vec![Target::Negative; grid.len()];
    for (i, t) in targets.iter_mut().enumerate() {
        let (cx, cy) = grid.center(i % grid.cols, i / grid.cols);
        let mut best: Option<(f64, usize)> = None;
        for (g, (roi, _)) in boxes.iter().enumerate() {
            let dx = (cx - roi.x_center).abs();
            let dy = (cy - roi.y_center).abs();
            let rx = (0.25 * roi.width).max(f64::from(STRIDE) / 2.0);
            let ry = (0.25 * roi.height).max(f64::from(STRIDE) / 2.0);
            if dx <= rx && dy <= ry {
                let d = (dx / rx).powi(2) + (dy / ry).powi(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, g));
                }
            }
        }
        if let Some((_, g)) = best {
            *t = Target::Positive(g);
        }
    }
    targets
}

fn load_train_images(manifest: &DatasetManifest, granularity: Granularity) -> Result<Vec<TrainImage>> {
    let records: Vec<_> = manifest.split_records(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::Training("the train split is empty".into()));
    }
    // Resolve every class before touching pixels so label problems fail fast.
    let labelled: Vec<Vec<(Roi, usize)>> = records
        .iter()
        .map(|r| {
            r.rois
                .iter()
                .map(|roi| {
                    granularity
                        .class_of(roi.label)
                        .map(|c| (*roi, c))
                        .map_err(|e| Error::Training(format!("{}: {e}", r.image_id)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    records
        .par_iter()
        .zip(labelled)
        .map(|(record, boxes)| {
            let pixels = Pixels::open(&manifest.resolve_path(record))?;
            let grid = CellGrid::new(&pixels);
            let targets = assign_targets(&grid, &boxes);
            let positives = (0..targets.len())
                .filter(|&i| matches!(targets[i], Target::Positive(_)))
                .collect();
            let negatives = (0..targets.len()).filter(|&i| targets[i] == Target::Negative).collect();
            Ok(TrainImage {
                grid,
                targets,
                boxes,
                positives,
                negatives,
            })
        })
        .collect()
}

fn fit_feature_stats<R: Rng>(images: &[TrainImage], rng: &mut R) -> (Vec<f32>, Vec<f32>) {
    const PER_IMAGE: usize = 64;
    let mut sum = vec![0.0f64; FEATURE_DIM];
    let mut sum2 = vec![0.0f64; FEATURE_DIM];
    let mut n = 0.0f64;
    let mut x = vec![0.0f32; FEATURE_DIM];
    for img in images {
        for _ in 0..PER_IMAGE.min(img.grid.len()) {
            let i = rng.gen_range(0..img.grid.len());
            img.grid.features(i % img.grid.cols, i / img.grid.cols, &mut x);
            for (k, v) in x.iter().enumerate() {
                sum[k] += f64::from(*v);
                sum2[k] += f64::from(*v) * f64::from(*v);
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum2
        .iter()
        .zip(&mean)
        .map(|(s2, m)| {
            let var = (s2 / n - m * m).max(0.0);
            if var.sqrt() > 1e-6 {
                var.sqrt() as f32
            } else {
                1.0
            }
        })
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), std)
}

struct StepGrads {
    l1: Vec<f32>,
    l2: Vec<f32>,
    head: Vec<f32>,
    objectness: f64,
    box_regression: f64,
    classification: f64,
}

impl StepGrads {
    fn zeros(w: &Weights) -> Self {
        StepGrads {
            l1: vec![0.0; w.l1.num_params()],
            l2: vec![0.0; w.l2.num_params()],
            head: vec![0.0; w.head.num_params()],
            objectness: 0.0,
            box_regression: 0.0,
            classification: 0.0,
        }
    }

    fn add(&mut self, o: &StepGrads) {
        for (a, b) in [(&mut self.l1, &o.l1), (&mut self.l2, &o.l2), (&mut self.head, &o.head)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.objectness += o.objectness;
        self.box_regression += o.box_regression;
        self.classification += o.classification;
    }
}

/// Loss and gradient over one minibatch of anchors.
fn batch_gradient(model: &DetectorModel, image: &TrainImage, anchors: &[usize], n_pos: usize) -> StepGrads {
    let batch = anchors.len() as f64;
    let pos_norm = n_pos.max(1) as f64;
    let c = model.num_classes();
    let w = &model.weights;
    anchors
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = StepGrads::zeros(w);
            let mut x = vec![0.0f32; FEATURE_DIM];
            for &i in chunk {
                let (col, row) = (i % image.grid.cols, i / image.grid.cols);
                image.grid.features(col, row, &mut x);
                model.standardize(&mut x);
                let fwd = model.forward(&x);
                let mut dout = vec![0.0f32; w.head.outputs];
                let target = image.targets[i];
                let positive = matches!(target, Target::Positive(_));
                let logit = f64::from(fwd.out[0]);
                let y = if positive { 1.0 } else { 0.0 };
                g.objectness += bce_with_logit(logit, y) / batch;
                dout[0] = ((sigmoid(logit) - y) / batch) as f32;
                if let Target::Positive(gt) = target {
                    let (roi, class) = image.boxes[gt];
                    let (cx, cy) = image.grid.center(col, row);
                    let a = model.meta.anchor_size;
                    let t = [
                        (roi.x_center - cx) / a,
                        (roi.y_center - cy) / a,
                        (roi.width / a).ln(),
                        (roi.height / a).ln(),
                    ];
                    for k in 0..4 {
                        let (l, d) = smooth_l1(f64::from(fwd.out[1 + k]) - t[k]);
                        g.box_regression += l / pos_norm;
                        dout[1 + k] = (d / pos_norm) as f32;
                    }
                    if c > 1 {
                        let p = softmax(&fwd.out[5..]);
                        g.classification -= p[class].max(1e-300).ln() / pos_norm;
                        for k in 0..c {
                            let onehot = if k == class { 1.0 } else { 0.0 };
                            dout[5 + k] = ((p[k] - onehot) / pos_norm) as f32;
                        }
                    }
                }
                let mut dh2 = vec![0.0f32; w.l2.outputs];
                w.head.backward(&fwd.h2, &dout, &mut g.head, Some(&mut dh2));
                for (d, h) in dh2.iter_mut().zip(&fwd.h2) {
                    if *h <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut dh1 = vec![0.0f32; w.l1.outputs];
                w.l2.backward(&fwd.h1, &dh2, &mut g.l2, Some(&mut dh1));
                for (d, h) in dh1.iter_mut().zip(&fwd.h1) {
                    if *h <= 0.0 {
                        *d = 0.0;
                    }
                }
                w.l1.backward(&x, &dh1, &mut g.l1, None);
            }
            g
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(StepGrads::zeros(w), |mut acc, g| {
            acc.add(&g);
            acc
        })
}

/// Trains a detector on the manifest's train split. Each step draws one
/// image and samples `rpn_batch` anchors from it, at most half of them
/// positive.
pub fn train_detector(
    manifest: &DatasetManifest,
    granularity: Granularity,
    config: &DetectorTrainConfig,
) -> Result<DetectorModel> {
    config.validate()?;
    let images = load_train_images(manifest, granularity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xde7e_c70b);
    let (feature_mean, feature_std) = fit_feature_stats(&images, &mut rng);

    let c = granularity.num_classes();
    let mut head = Dense::new(HIDDEN, head_outputs(c), 0.1, &mut rng);
    // Start with a low objectness prior, as most cells are background.
    head.bias[0] = -2.0;
    let weights = Weights {
        l1: Dense::new(FEATURE_DIM, HIDDEN, 2f32.sqrt(), &mut rng),
        l2: Dense::new(HIDDEN, HIDDEN, 2f32.sqrt(), &mut rng),
        head,
    };
    let mut model = DetectorModel {
        meta: DetectorMeta {
            backend: BACKEND_NAME.into(),
            granularity: GranularityConfig::new(granularity),
            config: config.clone(),
            stride: STRIDE,
            anchor_size: ANCHOR_SIZE,
            hidden: HIDDEN,
            feature_dim: FEATURE_DIM,
            probability_convention: if c == 1 {
                "sigmoid objectness".into()
            } else {
                "objectness times softmax over classes; sums to objectness".into()
            },
            feature_mean,
            feature_std,
            training_log: None,
            train_images: images.len(),
        },
        weights,
        log: Vec::with_capacity(config.total_steps),
    };

    let mut opt = [
        Sgd::new(model.weights.l1.num_params(), config.momentum, config.weight_decay),
        Sgd::new(model.weights.l2.num_params(), config.momentum, config.weight_decay),
        Sgd::new(model.weights.head.num_params(), config.momentum, config.weight_decay),
    ];
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut anchors = Vec::with_capacity(config.rpn_batch);
    for step in 0..config.total_steps {
        if step % images.len() == 0 {
            order.shuffle(&mut rng);
        }
        let image = &images[order[step % images.len()]];
        anchors.clear();
        let n_pos = image.positives.len().min(config.rpn_batch / 2);
        anchors.extend(image.positives.choose_multiple(&mut rng, n_pos).copied());
        let n_neg = (config.rpn_batch - n_pos).min(image.negatives.len());
        anchors.extend(image.negatives.choose_multiple(&mut rng, n_neg).copied());
        if anchors.is_empty() {
            continue;
        }
        let g = batch_gradient(&model, image, &anchors, n_pos);
        let lr = config.lr_at(step);
        let w = &mut model.weights;
        opt[0].step_layer(&mut w.l1.weight, &mut w.l1.bias, &g.l1, lr);
        opt[1].step_layer(&mut w.l2.weight, &mut w.l2.bias, &g.l2, lr);
        opt[2].step_layer(&mut w.head.weight, &mut w.head.bias, &g.head, lr);
        let loss = g.objectness + g.box_regression + g.classification;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at step {step}")));
        }
        model.log.push(StepRecord {
            step,
            lr,
            loss,
            objectness: g.objectness,
            box_regression: g.box_regression,
            classification: g.classification,
            positives: n_pos,
        });
        if step % 1000 == 0 {
            log::info!("detector step {step}/{}: loss {loss:.4} lr {lr:e}", config.total_steps);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_is_continuous_at_beta() {
        let (a, _) = smooth_l1(SMOOTH_L1_BETA - 1e-12);
        let (b, _) = smooth_l1(SMOOTH_L1_BETA + 1e-12);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn every_lesion_gets_a_positive_cell() {
        let grid = CellGrid::new(&Pixels::filled(64, 48, [0.5; 3]));
        let boxes = vec![
            (Roi::new(10.3, 11.0, 6.0, 5.0), 0),
            (Roi::new(40.0, 30.0, 30.0, 20.0), 0),
        ];
        let targets = assign_targets(&grid, &boxes);
        for g in 0..boxes.len() {
            assert!(targets.contains(&Target::Positive(g)));
        }
        assert!(targets.contains(&Target::Negative));
    }
}
