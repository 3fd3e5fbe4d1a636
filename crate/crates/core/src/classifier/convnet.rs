use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Pixels;
use crate::nn::{sigmoid, Conv3x3, Dense};

const PIXEL_MEAN: f32 = 0.5;
const PIXEL_STD: f32 = 0.25;

/// Converts an interleaved RGB patch into a normalized CHW tensor.
pub fn to_chw(pixels: &Pixels) -> Vec<f32> {
    let (w, h) = (pixels.width() as usize, pixels.height() as usize);
    let mut out = vec![0.0f32; 3 * w * h];
    for (i, px) in pixels.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = (px[c] - PIXEL_MEAN) / PIXEL_STD;
        }
    }
    out
}

/// Flips a CHW tensor in place.
pub fn flip_chw(x: &mut [f32], side: usize, horizontal: bool, vertical: bool) {
    for plane in x.chunks_exact_mut(side * side) {
        if horizontal {
            for row in plane.chunks_exact_mut(side) {
                row.reverse();
            }
        }
        if vertical {
            for y in 0..side / 2 {
                for x in 0..side {
                    plane.swap(y * side + x, (side - 1 - y) * side + x);
                }
            }
        }
    }
}

/// Three 3x3 conv blocks with ReLU followed by global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBackbone {
    pub side: usize,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub conv3: Conv3x3,
}

/// [`ConvBackbone`] with a single logit head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub backbone: ConvBackbone,
    pub head: Dense,
}

pub(crate) struct Activations {
    pub a1: Vec<f32>,
    pub a2: Vec<f32>,
    pub a3: Vec<f32>,
    pub pooled: Vec<f32>,
    pub logit: f32,
}

/// Gradient buffers with the same layout as the network's layers.
#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub conv1: Vec<f32>,
    pub conv2: Vec<f32>,
    pub conv3: Vec<f32>,
    pub head: Vec<f32>,
}

impl Grads {
    pub fn zeros(net: &ConvNet) -> Self {
        Grads {
            conv1: vec![0.0; net.backbone.conv1.num_params()],
            conv2: vec![0.0; net.backbone.conv2.num_params()],
            conv3: vec![0.0; net.backbone.conv3.num_params()],
            head: vec![0.0; net.head.num_params()],
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in [
            (&mut self.conv1, &other.conv1),
            (&mut self.conv2, &other.conv2),
            (&mut self.conv3, &other.conv3),
            (&mut self.head, &other.head),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in [&mut self.conv1, &mut self.conv2, &mut self.conv3, &mut self.head] {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn relu_in_place(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_mask(grad: &mut [f32], act: &[f32]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl ConvBackbone {
    pub fn feature_dim(&self) -> usize {
        self.conv3.out_ch
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params() + self.conv2.num_params() + self.conv3.num_params()
    }

    fn sizes(&self) -> [(usize, usize); 3] {
        let s0 = (self.side, self.side);
        let s1 = self.conv1.out_size(s0.0, s0.1);
        let s2 = self.conv2.out_size(s1.0, s1.1);
        [s0, s1, s2]
    }

    fn forward(&self, x: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let [s0, s1, s2] = self.sizes();
        let mut a1 = self.conv1.forward(x, s0.0, s0.1);
        relu_in_place(&mut a1);
        let mut a2 = self.conv2.forward(&a1, s1.0, s1.1);
        relu_in_place(&mut a2);
        let mut a3 = self.conv3.forward(&a2, s2.0, s2.1);
        relu_in_place(&mut a3);
        let area = s2.0 * s2.1;
        let pooled = a3
            .chunks_exact(area)
            .map(|plane| plane.iter().sum::<f32>() / area as f32)
            .collect();
        (a1, a2, a3, pooled)
    }

    /// Globally pooled activations of the last block.
    pub fn features(&self, x: &[f32]) -> Vec<f32> {
        self.forward(x).3
    }
}

impl ConvNet {
    pub const CHANNELS: [usize; 3] = [8, 16, 16];

    pub fn new(side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = Self::CHANNELS;
        ConvNet {
            backbone: ConvBackbone {
                side,
                conv1: Conv3x3::new(3, c1, 2, &mut rng),
                conv2: Conv3x3::new(c1, c2, 2, &mut rng),
                conv3: Conv3x3::new(c2, c3, 1, &mut rng),
            },
            head: Dense::zeros(c3, 1),
        }
    }

    pub fn side(&self) -> usize {
        self.backbone.side
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.num_params()
    }

    pub(crate) fn forward(&self, x: &[f32]) -> Activations {
        let (a1, a2, a3, pooled) = self.backbone.forward(x);
        let mut logit = [0.0f32];
        self.head.forward(&pooled, &mut logit);
        Activations {
            a1,
            a2,
            a3,
            pooled,
            logit: logit[0],
        }
    }

    /// Backpropagates `dlogit` through the network into `grads`.
    pub(crate) fn backward(&self, x: &[f32], act: &Activations, dlogit: f32, grads: &mut Grads) {
        let b = &self.backbone;
        let [s0, s1, s2] = b.sizes();
        let mut dpooled = vec![0.0f32; self.feature_dim()];
        self.head
            .backward(&act.pooled, &[dlogit], &mut grads.head, Some(&mut dpooled));
        let area = s2.0 * s2.1;
        let mut da3: Vec<f32> = dpooled
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / area as f32, area))
            .collect();
        relu_mask(&mut da3, &act.a3);
        let mut da2 = b
            .conv3
            .backward(&act.a2, s2.0, s2.1, &da3, &mut grads.conv3, true)
            .expect("input gradient requested");
        relu_mask(&mut da2, &act.a2);
        let mut da1 = b
            .conv2
            .backward(&act.a1, s1.0, s1.1, &da2, &mut grads.conv2, true)
            .expect("input gradient requested");
        relu_mask(&mut da1, &act.a1);
        b.conv1.backward(x, s0.0, s0.1, &da1, &mut grads.conv1, false);
    }

    pub fn features(&self, x: &[f32]) -> Vec<f32> {
        self.backbone.features(x)
    }

    pub fn probability(&self, x: &[f32]) -> f64 {
        sigmoid(f64::from(self.forward(x).logit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bce_with_logit;

    #[test]
    fn flips_are_involutions() {
        let side = 4;
        let x: Vec<f32> = (0..3 * side * side).map(|v| v as f32).collect();
        let mut y = x.clone();
        flip_chw(&mut y, side, true, true);
        assert_ne!(x, y);
        assert_eq!(y[0], x[side * side - 1]);
        flip_chw(&mut y, side, true, true);
        assert_eq!(x, y);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_difference() {
        let mut net = ConvNet::new(8, 11);
        net.head = Dense::new(net.feature_dim(), 1, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let x: Vec<f32> = (0..3 * 64).map(|i| ((i * 37 % 17) as f32 / 8.0) - 1.0).collect();
        let act = net.forward(&x);
        let p = sigmoid(f64::from(act.logit));
        let mut grads = Grads::zeros(&net);
        net.backward(&x, &act, (p - 1.0) as f32, &mut grads);

        let loss = |n: &ConvNet| bce_with_logit(f64::from(n.forward(&x).logit), 1.0);
        let eps = 1e-2f32;
        for i in [0usize, 13, 40] {
            let mut up = net.clone();
            up.backbone.conv1.weight[i] += eps;
            let mut down = net.clone();
            down.backbone.conv1.weight[i] -= eps;
            let fd = (loss(&up) - loss(&down)) / (2.0 * f64::from(eps));
            assert!((fd - f64::from(grads.conv1[i])).abs() < 2e-3, "{fd} vs {}", grads.conv1[i]);
        }
    }
}
