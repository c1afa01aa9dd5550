#![allow(dead_code)]

use convtts::nn::{no_grad, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect()
}

pub fn random_param(rng: &mut impl Rng, shape: Shape, scale: f32) -> Tensor {
    Tensor::parameter(shape, random_vec(rng, shape.numel(), scale))
}

/// Analytic and central-difference (step `h`) gradients for each tensor in `params`.
fn gradient_pairs(params: &[Tensor], loss: impl Fn() -> Tensor, h: f32) -> Vec<(Vec<f64>, Vec<f64>)> {
    for p in params {
        p.zero_grad();
    }
    let l = loss();
    l.backward().expect("backward");
    let pairs = params
        .iter()
        .map(|p| {
            let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut numeric = vec![0.0f64; p.numel()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let orig = p.data()[i];
                p.data_mut()[i] = orig + h;
                let up = no_grad(|| loss().item()) as f64;
                p.data_mut()[i] = orig - h;
                let down = no_grad(|| loss().item()) as f64;
                p.data_mut()[i] = orig;
                *slot = (up - down) / (2.0 * h as f64);
            }
            (analytic.into_iter().map(f64::from).collect(), numeric)
        })
        .collect();
    for p in params {
        p.zero_grad();
    }
    pairs
}

/// `|a - n| / max(|a|, |n|)`, or the plain difference when both vanish.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a.powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a.powi(2)).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Central finite differences (step `h`) against the analytic gradient for
/// every tensor in `params`. Returns the worst norm-wise relative error
/// `|g_a - g_n| / max(|g_a|, |g_n|)` over the tensors.
pub fn grad_check(params: &[Tensor], loss: impl Fn() -> Tensor, h: f32) -> f64 {
    gradient_pairs(params, loss, h)
        .iter()
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// As [`grad_check`], but over the single gradient vector formed by all of
/// `params` together.
pub fn grad_check_joint(params: &[Tensor], loss: impl Fn() -> Tensor, h: f32) -> f64 {
    let (a, n): (Vec<Vec<f64>>, Vec<Vec<f64>>) = gradient_pairs(params, loss, h).into_iter().unzip();
    relative_error(&a.concat(), &n.concat())
}

/// Random projection weights so a tensor reduces to a well-scaled scalar.
pub fn projection_weights(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    random_vec(rng, n, 1.0)
}
