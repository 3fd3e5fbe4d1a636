use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::convnet::{flip_chw, ConvNet, Grads};
use super::{cosine_lr, ClassifierTrainConfig};
use crate::error::Result;
use crate::metrics::{auc, ScoredLabel};
use crate::nn::{bce_with_logit, sigmoid, Sgd};

/// A prepared network input and its binary target.
#[derive(Debug, Clone)]
pub struct LabeledInput {
    pub input: Vec<f32>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Empty when there is no val split or it has a single class.
    pub val_auc: Option<f64>,
}

struct Optimizers {
    conv1: Sgd,
    conv2: Sgd,
    conv3: Sgd,
    head: Sgd,
}

/// Mini-batch SGD with momentum, weight decay and the half-period cosine
/// schedule over all steps. Per-sample gradients are computed in parallel and
/// summed in sample order, so results do not depend on the thread count.
pub fn train_binary(
    net: &mut ConvNet,
    train: &[LabeledInput],
    val: &[LabeledInput],
    config: &ClassifierTrainConfig,
) -> Result<Vec<EpochRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c1a5);
    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let (m, wd) = (config.momentum, config.weight_decay);
    let mut opt = Optimizers {
        conv1: Sgd::new(net.backbone.conv1.num_params(), m, wd),
        conv2: Sgd::new(net.backbone.conv2.num_params(), m, wd),
        conv3: Sgd::new(net.backbone.conv3.num_params(), m, wd),
        head: Sgd::new(net.head.num_params(), m, wd),
    };
    let side = net.side();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let flips: Vec<(bool, bool)> = batch
                .iter()
                .map(|_| {
                    if config.flips {
                        (rng.gen::<bool>(), rng.gen::<bool>())
                    } else {
                        (false, false)
                    }
                })
                .collect();
            let frozen: &ConvNet = net;
            let per_sample: Vec<(Grads, f64)> = batch
                .par_iter()
                .zip(flips.par_iter())
                .map(|(&i, &(h, v))| {
                    let sample = &train[i];
                    let mut x = sample.input.clone();
                    if h || v {
                        flip_chw(&mut x, side, h, v);
                    }
                    let act = frozen.forward(&x);
                    let target = if sample.label { 1.0 } else { 0.0 };
                    let logit = f64::from(act.logit);
                    let loss = bce_with_logit(logit, target);
                    let mut g = Grads::zeros(frozen);
                    frozen.backward(&x, &act, (sigmoid(logit) - target) as f32, &mut g);
                    (g, loss)
                })
                .collect();
            let mut grads = Grads::zeros(net);
            for (g, loss) in &per_sample {
                grads.add(g);
                epoch_loss += loss;
            }
            grads.scale(1.0 / batch.len() as f32);
            let lr = cosine_lr(step, total_steps, config.base_lr)?;
            opt.conv1.step_layer(&mut net.backbone.conv1.weight, &mut net.backbone.conv1.bias, &grads.conv1, lr);
            opt.conv2.step_layer(&mut net.backbone.conv2.weight, &mut net.backbone.conv2.bias, &grads.conv2, lr);
            opt.conv3.step_layer(&mut net.backbone.conv3.weight, &mut net.backbone.conv3.bias, &grads.conv3, lr);
            opt.head.step_layer(&mut net.head.weight, &mut net.head.bias, &grads.head, lr);
            step += 1;
        }
        let loss = epoch_loss / train.len() as f64;
        let val_auc = evaluate_auc(net, val);
        log::info!("epoch {epoch}: loss {loss:.5} val_auc {val_auc:?}");
        curve.push(EpochRecord {
            epoch,
            loss,
            val_auc,
        });
    }
    Ok(curve)
}

/// Validation AUC, or `None` if undefined.
pub(crate) fn evaluate_auc(net: &ConvNet, samples: &[LabeledInput]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let pairs: Vec<ScoredLabel> = samples
        .par_iter()
        .map(|s| ScoredLabel::new(f64::from(net.forward(&s.input).logit), s.label))
        .collect();
    auc(&pairs).ok()
}
