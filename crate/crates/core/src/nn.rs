//! Minimal dense and convolutional layers with hand-written gradients, and
//! an SGD optimizer with momentum and coupled (PyTorch-style)
//! weight decay.

use rand::Rng;
pub(crate) use rand_distr_normal::standard_normal;
use serde::{Deserialize, Serialize};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, numerically stable.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Keeps sigmoid outputs strictly inside (0, 1) in f64.
#[inline]
pub fn open_unit(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

mod rand_distr_normal {
    use rand::Rng;

    /// Box-Muller standard normal sample.
    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }
}

/// SGD with momentum; weight decay is added to the gradient before the
/// momentum update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    /// Updates every parameter, all subject to weight decay.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.update(0, params, grads, lr, true);
    }

    /// Updates a layer whose gradient is laid out as `weight` then `bias`.
    /// Biases are not decayed.
    pub fn step_layer(&mut self, weight: &mut [f32], bias: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(weight.len() + bias.len(), grads.len());
        let n = weight.len();
        self.update(0, weight, &grads[..n], lr, true);
        self.update(n, bias, &grads[n..], lr, false);
    }

    fn update(&mut self, offset: usize, params: &mut [f32], grads: &[f32], lr: f64, decay: bool) {
        assert!(offset + params.len() <= self.velocity.len());
        let m = self.momentum as f32;
        let lr = lr as f32;
        let wd = if decay { self.weight_decay as f32 } else { 0.0 };
        let velocity = &mut self.velocity[offset..offset + params.len()];
        for ((p, v), g) in params.iter_mut().zip(velocity).zip(grads) {
            *v = m * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
}

/// Fully connected layer, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, gain: f32, rng: &mut R) -> Self {
        let std = gain / (inputs as f32).sqrt();
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| standard_normal(rng) * std).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, slot) in out.iter_mut().enumerate().take(self.outputs) {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.bias[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` (laid out as weight then
    /// bias) and, when requested, the input gradient into `dx`.
    pub fn backward(&self, x: &[f32], dy: &[f32], grad: &mut [f32], dx: Option<&mut [f32]>) {
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        for o in 0..self.outputs {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += d * xi;
            }
            gb[o] += d;
        }
        if let Some(dx) = dx {
            for o in 0..self.outputs {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (dxi, w) in dx.iter_mut().zip(row) {
                    *dxi += d * w;
                }
            }
        }
    }

    pub fn flat_params(&self) -> Vec<f32> {
        let mut v = self.weight.clone();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) {
        let n = self.weight.len();
        self.weight.copy_from_slice(&flat[..n]);
        self.bias.copy_from_slice(&flat[n..]);
    }

}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// 3x3 convolution with padding 1 over CHW tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3x3 {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_ch * 9) as f32).sqrt();
        Conv3x3 {
            in_ch,
            out_ch,
            stride,
            weight: (0..out_ch * in_ch * 9).map(|_| standard_normal(rng) * std).collect(),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (oh, ow) = self.out_size(h, w);
        let mut out = vec![0.0f32; self.out_ch * oh * ow];
        for o in 0..self.out_ch {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias[o]);
            for c in 0..self.in_ch {
                let src = &x[c * h * w..(c + 1) * h * w];
                let k = &self.weight[(o * self.in_ch + c) * 9..(o * self.in_ch + c + 1) * 9];
                for oy in 0..oh {
                    let cy = (oy * self.stride) as isize;
                    for ky in 0..3 {
                        let iy = cy + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for kx in 0..3 {
                            let wv = k[ky * 3 + kx];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride) as isize + kx as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    *d += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input
    /// gradient when `want_dx`.
    pub fn backward(
        &self,
        x: &[f32],
        h: usize,
        w: usize,
        dy: &[f32],
        grad: &mut [f32],
        want_dx: bool,
    ) -> Option<Vec<f32>> {
        let (oh, ow) = self.out_size(h, w);
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        let mut dx = want_dx.then(|| vec![0.0f32; self.in_ch * h * w]);
        for o in 0..self.out_ch {
            let dplane = &dy[o * oh * ow..(o + 1) * oh * ow];
            gb[o] += dplane.iter().sum::<f32>();
            for c in 0..self.in_ch {
                let src = &x[c * h * w..(c + 1) * h * w];
                let base = (o * self.in_ch + c) * 9;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = self.weight[base + ky * 3 + kx];
                        let mut acc = 0.0f32;
                        for oy in 0..oh {
                            let iy = (oy * self.stride) as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for ox in 0..ow {
                                let ix = (ox * self.stride) as isize + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let d = dplane[oy * ow + ox];
                                acc += d * src[iy * w + ix as usize];
                                if let Some(dx) = dx.as_mut() {
                                    dx[c * h * w + iy * w + ix as usize] += d * wv;
                                }
                            }
                        }
                        gw[base + ky * 3 + kx] += acc;
                    }
                }
            }
        }
        dx
    }
}
