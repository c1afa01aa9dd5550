//! Structural similarity between spectrograms viewed as images (bins × frames).
//!
//! Standardized values are shifted by [`SHIFT`] and clamped to `[0, RANGE]`
//! before windowing. Windows are separable 11-tap Gaussians (σ = 1.5) used in
//! valid mode; an image narrower than the window gets a window cut down to
//! its size. Everything below runs in f64.

use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const SHIFT: f64 = 4.0;
pub const RANGE: f64 = 8.0;
pub const C1: f64 = (0.01 * RANGE) * (0.01 * RANGE);
pub const C2: f64 = (0.03 * RANGE) * (0.03 * RANGE);

/// Normalized Gaussian taps of length `size`, centred on the middle tap.
pub fn gaussian_window(size: usize) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn prepare(v: f32) -> f64 {
    (v as f64 + SHIFT).clamp(0.0, RANGE)
}

fn passes_clamp(v: f32) -> bool {
    let s = v as f64 + SHIFT;
    s > 0.0 && s < RANGE
}

/// Valid-mode separable filtering of a row-major `h × w` image.
fn filter(img: &[f64], h: usize, w: usize, kh: &[f64], kw: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - kh.len(), w + 1 - kw.len());
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = kw.iter().enumerate().map(|(k, g)| g * img[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (k, g) in kh.iter().enumerate() {
            for c in 0..ow {
                out[r * ow + c] += g * rows[(r + k) * ow + c];
            }
        }
    }
    out
}

/// Adjoint of [`filter`]: spreads an `oh × ow` map back onto the `h × w` image.
fn filter_adjoint(map: &[f64], h: usize, w: usize, kh: &[f64], kw: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - kh.len(), w + 1 - kw.len());
    let mut rows = vec![0.0; h * ow];
    for r in 0..oh {
        for (k, g) in kh.iter().enumerate() {
            for c in 0..ow {
                rows[(r + k) * ow + c] += g * map[r * ow + c];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..ow {
            let v = rows[r * ow + c];
            for (k, g) in kw.iter().enumerate() {
                out[r * w + c + k] += g * v;
            }
        }
    }
    out
}

struct Local {
    mean: f64,
    /// d(mean SSIM)/d(prepared x), when requested.
    grad: Option<Vec<f64>>,
}

fn local_ssim(x: &[f64], y: &[f64], h: usize, w: usize, want_grad: bool) -> Local {
    let kh = gaussian_window(WINDOW.min(h));
    let kw = gaussian_window(WINDOW.min(w));
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter(x, h, w, &kh, &kw);
    let my = filter(y, h, w, &kh, &kw);
    let exx = filter(&sq(x, x), h, w, &kh, &kw);
    let eyy = filter(&sq(y, y), h, w, &kh, &kw);
    let exy = filter(&sq(x, y), h, w, &kh, &kw);
    let count = mx.len();

    let mut total = 0.0;
    let (mut g_mu, mut g_xx, mut g_xy) = if want_grad {
        (vec![0.0; count], vec![0.0; count], vec![0.0; count])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..count {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + C1;
        let a2 = 2.0 * cxy + C2;
        let b1 = ux * ux + uy * uy + C1;
        let b2 = vx + vy + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let k = 1.0 / count as f64;
            g_mu[i] = k * s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
            g_xx[i] = -k * s / b2;
            g_xy[i] = k * 2.0 * s / a2;
        }
    }
    let grad = want_grad.then(|| {
        let t_mu = filter_adjoint(&g_mu, h, w, &kh, &kw);
        let t_xx = filter_adjoint(&g_xx, h, w, &kh, &kw);
        let t_xy = filter_adjoint(&g_xy, h, w, &kh, &kw);
        (0..h * w).map(|p| t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p]).collect()
    });
    Local {
        mean: total / count as f64,
        grad,
    }
}

/// Mean local SSIM of two row-major `rows × cols` images in standardized units.
pub fn ssim_index(x: &[f32], y: &[f32], rows: usize, cols: usize) -> Result<f64> {
    if x.len() != y.len() || x.len() != rows * cols {
        return Err(Error::Shape(format!(
            "ssim needs two {rows}x{cols} images, got {} and {} values",
            x.len(),
            y.len()
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("ssim of an empty image".into()));
    }
    let px: Vec<f64> = x.iter().map(|&v| prepare(v)).collect();
    let py: Vec<f64> = y.iter().map(|&v| prepare(v)).collect();
    Ok(local_ssim(&px, &py, rows, cols, false).mean)
}

/// Differentiable SSIM of a `(B, bins, T)` prediction against constant targets.
///
/// Each item is compared over its first `lengths[b]` frames; the result is
/// the average of the per-item indices. Items of length zero are skipped.
pub fn ssim(pred: &Tensor, target: &[f32], lengths: &[usize]) -> Result<Tensor> {
    let s = pred.shape();
    if target.len() != s.numel() || lengths.len() != s.batch {
        return Err(Error::Shape("ssim: prediction, target and lengths disagree".into()));
    }
    if lengths.iter().any(|&l| l > s.time) {
        return Err(Error::Shape("ssim: length exceeds padded time".into()));
    }
    let items = lengths.iter().filter(|&&l| l > 0).count();
    if items == 0 {
        return Err(Error::InvalidArgument("ssim: every item is empty".into()));
    }
    let data = pred.data();
    let crop = |src: &[f32], b: usize, len: usize| -> Vec<f32> {
        (0..s.channels)
            .flat_map(|c| src[s.index(b, c, 0)..][..len].iter().copied())
            .collect()
    };
    let mut value = 0.0;
    let mut grad = vec![0.0f32; s.numel()];
    for (b, &len) in lengths.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let xs = crop(&data, b, len);
        let ys = crop(target, b, len);
        let px: Vec<f64> = xs.iter().map(|&v| prepare(v)).collect();
        let py: Vec<f64> = ys.iter().map(|&v| prepare(v)).collect();
        let local = local_ssim(&px, &py, s.channels, len, true);
        value += local.mean / items as f64;
        let g = local.grad.expect("requested");
        for c in 0..s.channels {
            for t in 0..len {
                if passes_clamp(xs[c * len + t]) {
                    grad[s.index(b, c, t)] = (g[c * len + t] / items as f64) as f32;
                }
            }
        }
    }
    drop(data);
    Ok(Tensor::from_op(Shape::scalar(), vec![value as f32], vec![pred.clone()], move |ctx| {
        let g = ctx.grad[0];
        vec![Some(grad.iter().map(|v| v * g).collect())]
    }))
}
