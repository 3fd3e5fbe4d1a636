use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, sigmoid};

/// L2-regularized logistic regression (intercept not penalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            l2: 1.0,
            tolerance: 1e-8,
            max_iterations: 2_000_000,
            seed: 0,
        }
    }
}

/// Objective: mean negative log-likelihood plus `l2 / (2n) * |w|^2`.
/// `params` is the weight vector followed by the intercept.
pub fn logistic_loss(params: &[f64], xs: &[Vec<f64>], ys: &[bool], l2: f64) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let n = xs.len() as f64;
    let nll: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = b[0] + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            bce_with_logit(z, if y { 1.0 } else { 0.0 })
        })
        .sum();
    nll / n + l2 / (2.0 * n) * w.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient of [`logistic_loss`], same layout as `params`.
pub fn logistic_gradient(params: &[f64], xs: &[Vec<f64>], ys: &[bool], l2: f64) -> Vec<f64> {
    let d = params.len() - 1;
    let (w, b) = params.split_at(d);
    let n = xs.len() as f64;
    let mut grad = vec![0.0; d + 1];
    for (x, &y) in xs.iter().zip(ys) {
        let z = b[0] + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        for (g, xi) in grad[..d].iter_mut().zip(x) {
            *g += r * xi;
        }
        grad[d] += r;
    }
    for (j, g) in grad.iter_mut().enumerate() {
        *g /= n;
        if j < d {
            *g += l2 / n * w[j];
        }
    }
    grad
}

/// Largest eigenvalue of `A^T A` for the design matrix with an intercept
/// column, by power iteration from a seeded start vector.
fn gram_spectral_norm(xs: &[Vec<f64>], seed: u64) -> f64 {
    let d = xs.first().map_or(0, Vec::len) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut next = vec![0.0; d];
        for x in xs {
            let av = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d - 1];
            for (nj, xj) in next.iter_mut().zip(x) {
                *nj += av * xj;
            }
            next[d - 1] += av;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-10 * norm;
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

/// Full-batch gradient descent with step `1 / L`, where `L` bounds the
/// objective's curvature, until the gradient norm drops below the tolerance.
pub fn train_logistic(xs: &[Vec<f64>], ys: &[bool], options: &LogisticOptions) -> Result<LogisticModel> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidInput("logistic regression needs matching, non-empty inputs".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidInput("covariate vectors differ in length".into()));
    }
    let positives = ys.iter().filter(|&&y| y).count();
    if positives == 0 || positives == ys.len() {
        return Err(Error::Training("logistic regression needs both classes".into()));
    }
    if !(options.l2 >= 0.0) {
        return Err(Error::Config("l2 must be non-negative".into()));
    }
    let n = xs.len() as f64;
    // Safety margin on the power-iteration estimate.
    let lipschitz = (0.25 * gram_spectral_norm(xs, options.seed) * 1.01 + options.l2) / n;
    let step = 1.0 / lipschitz;

    let mut params = vec![0.0; d + 1];
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let grad = logistic_gradient(&params, xs, ys, options.l2);
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < options.tolerance || iterations >= options.max_iterations {
            break;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step * g;
        }
        iterations += 1;
    }
    if grad_norm >= options.tolerance {
        log::warn!("logistic regression stopped at gradient norm {grad_norm:.3e} after {iterations} iterations");
    }
    let intercept = params.pop().expect("intercept present");
    Ok(LogisticModel {
        weights: params,
        intercept,
        l2: options.l2,
        iterations,
        gradient_norm: grad_norm,
    })
}
