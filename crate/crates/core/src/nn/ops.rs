//! Differentiable tensor operations.
//!
//! Element-wise ops panic on shape mismatch (a programming error inside the
//! models); ops with user-facing failure modes return `Result`.

use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {} vs {}",
        a.shape(),
        b.shape()
    );
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "add");
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone(), b.clone()], |ctx| {
        vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]
    })
}

/// Adds a constant array of the same shape.
pub fn add_const(a: &Tensor, c: &[f32]) -> Tensor {
    assert_eq!(a.numel(), c.len(), "add_const: length mismatch");
    let data: Vec<f32> = a.data().iter().zip(c).map(|(x, y)| x + y).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone()], |ctx| vec![Some(ctx.grad.to_vec())])
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "mul");
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone(), b.clone()], |ctx| {
        let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
        let ga = ctx.parents[0]
            .requires_grad()
            .then(|| ctx.grad.iter().zip(b.iter()).map(|(g, y)| g * y).collect());
        let gb = ctx.parents[1]
            .requires_grad()
            .then(|| ctx.grad.iter().zip(a.iter()).map(|(g, x)| g * x).collect());
        vec![ga, gb]
    })
}

pub fn scale(a: &Tensor, s: f32) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone()], move |ctx| {
        vec![Some(ctx.grad.iter().map(|g| g * s).collect())]
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone()], |ctx| {
        let g = ctx
            .grad
            .iter()
            .zip(ctx.output)
            .map(|(g, &y)| if y > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(g)]
    })
}

pub fn tanh(a: &Tensor) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|x| x.tanh()).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone()], |ctx| {
        let g = ctx
            .grad
            .iter()
            .zip(ctx.output)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        vec![Some(g)]
    })
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data: Vec<f32> = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_op(a.shape(), data, vec![a.clone()], |ctx| {
        let g = ctx
            .grad
            .iter()
            .zip(ctx.output)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        vec![Some(g)]
    })
}

/// Channels `start..start + len` of a `(batch, channels, time)` tensor.
pub fn narrow_channels(a: &Tensor, start: usize, len: usize) -> Tensor {
    let s = a.shape();
    assert!(start + len <= s.channels, "narrow_channels out of range");
    let out_shape = Shape::new(s.batch, len, s.time);
    let src = a.data();
    let mut data = Vec::with_capacity(out_shape.numel());
    for b in 0..s.batch {
        let off = (b * s.channels + start) * s.time;
        data.extend_from_slice(&src[off..off + len * s.time]);
    }
    drop(src);
    Tensor::from_op(out_shape, data, vec![a.clone()], move |ctx| {
        let mut g = vec![0.0; s.numel()];
        for b in 0..s.batch {
            let off = (b * s.channels + start) * s.time;
            g[off..off + len * s.time].copy_from_slice(&ctx.grad[b * len * s.time..][..len * s.time]);
        }
        vec![Some(g)]
    })
}

/// Per-item, per-frame validity mask of shape `(batch, time)`, broadcast over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMask {
    pub batch: usize,
    pub time: usize,
    values: Rc<Vec<f32>>,
}

impl TimeMask {
    pub fn from_lengths(lengths: &[usize], time: usize) -> Self {
        let mut values = vec![0.0; lengths.len() * time];
        for (b, &len) in lengths.iter().enumerate() {
            values[b * time..b * time + len.min(time)].fill(1.0);
        }
        Self {
            batch: lengths.len(),
            time,
            values: Rc::new(values),
        }
    }

    pub fn get(&self, b: usize, t: usize) -> f32 {
        self.values[b * self.time + t]
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.values[b * self.time..(b + 1) * self.time].iter().filter(|&&v| v > 0.0).count())
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// Expands to a per-element array for a tensor with `channels` channels.
    pub fn broadcast(&self, channels: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.batch * channels * self.time);
        for b in 0..self.batch {
            let row = &self.values[b * self.time..(b + 1) * self.time];
            for _ in 0..channels {
                out.extend_from_slice(row);
            }
        }
        out
    }
}

/// Zeroes frames outside the mask.
pub fn apply_mask(a: &Tensor, mask: &TimeMask) -> Tensor {
    let s = a.shape();
    assert_eq!((s.batch, s.time), (mask.batch, mask.time), "mask shape mismatch");
    let m = mask.broadcast(s.channels);
    let data: Vec<f32> = a.data().iter().zip(&m).map(|(x, m)| x * m).collect();
    Tensor::from_op(s, data, vec![a.clone()], move |ctx| {
        vec![Some(ctx.grad.iter().zip(&m).map(|(g, m)| g * m).collect())]
    })
}

/// Dilated 1D convolution; `weight` is `(out, in, kernel)`, `bias` is `(1, out, 1)`.
///
/// Causal convolutions pad `(kernel - 1) * dilation` zeros on the left;
/// non-causal ones split the same padding symmetrically. Time length is preserved.
pub fn conv1d(x: &Tensor, weight: &Tensor, bias: &Tensor, dilation: usize, causal: bool) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.channels != ws.channels {
        return Err(Error::Shape(format!(
            "conv1d: input has {} channels, weight expects {}",
            xs.channels, ws.channels
        )));
    }
    if bias.numel() != ws.batch {
        return Err(Error::Shape(format!(
            "conv1d: bias has {} entries for {} output channels",
            bias.numel(),
            ws.batch
        )));
    }
    if dilation == 0 || ws.time == 0 {
        return Err(Error::InvalidArgument("conv1d: dilation and kernel must be >= 1".into()));
    }
    if xs.time == 0 {
        return Err(Error::InvalidArgument("conv1d: empty time axis".into()));
    }
    weight.check_finite("conv1d weights")?;
    bias.check_finite("conv1d bias")?;

    let geom = ConvGeom::new(xs.batch, xs.channels, ws.batch, xs.time, ws.time, dilation, causal);
    let y = kernels::conv1d_forward(&geom, &x.data(), &weight.data(), &bias.data());
    let out_shape = Shape::new(xs.batch, ws.batch, xs.time);
    Ok(Tensor::from_op(
        out_shape,
        y,
        vec![x.clone(), weight.clone(), bias.clone()],
        move |ctx| {
            let [x, w, b] = ctx.parents else { unreachable!() };
            let (gx, gw, gb) = kernels::conv1d_backward(
                &geom,
                &x.data(),
                &w.data(),
                ctx.grad,
                x.requires_grad(),
                w.requires_grad(),
            );
            vec![gx, gw, b.requires_grad().then_some(gb)]
        },
    ))
}

/// Per-time-step affine map; `weight` is `(out, in, 1)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.shape().time != 1 {
        return Err(Error::Shape("linear: weight must have kernel size 1".into()));
    }
    conv1d(x, weight, bias, 1, false)
}

/// Looks up rows of a `(vocab, dim, 1)` table for a `(batch, len)` id grid.
/// Output is `(batch, dim, len)`.
pub fn embedding(ids: &[usize], batch: usize, len: usize, table: &Tensor) -> Result<Tensor> {
    let ts = table.shape();
    let (vocab, dim) = (ts.batch, ts.channels);
    if ids.len() != batch * len {
        return Err(Error::Shape("embedding: id grid size mismatch".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::InvalidArgument(format!(
            "embedding: id {bad} outside vocabulary of {vocab}"
        )));
    }
    let tab = table.data();
    let mut data = vec![0.0; batch * dim * len];
    for b in 0..batch {
        for n in 0..len {
            let row = &tab[ids[b * len + n] * dim..][..dim];
            for d in 0..dim {
                data[(b * dim + d) * len + n] = row[d];
            }
        }
    }
    drop(tab);
    let ids = ids.to_vec();
    Ok(Tensor::from_op(
        Shape::new(batch, dim, len),
        data,
        vec![table.clone()],
        move |ctx| {
            let mut g = vec![0.0; vocab * dim];
            for b in 0..batch {
                for n in 0..len {
                    let row = ids[b * len + n] * dim;
                    for d in 0..dim {
                        g[row + d] += ctx.grad[(b * dim + d) * len + n];
                    }
                }
            }
            vec![Some(g)]
        },
    ))
}

/// Batched matrix product over `(batch, rows, cols)` tensors with optional transposes.
pub fn matmul(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch {
        return Err(Error::Shape("matmul: batch mismatch".into()));
    }
    let (m, k) = if trans_a { (sa.time, sa.channels) } else { (sa.channels, sa.time) };
    let (k2, n) = if trans_b { (sb.time, sb.channels) } else { (sb.channels, sb.time) };
    if k != k2 {
        return Err(Error::Shape(format!("matmul: inner dimensions {k} vs {k2}")));
    }
    let batch = sa.batch;
    let c = kernels::batched_matmul(batch, m, k, n, &a.data(), trans_a, &b.data(), trans_b);
    Ok(Tensor::from_op(
        Shape::new(batch, m, n),
        c,
        vec![a.clone(), b.clone()],
        move |ctx| {
            let [a, b] = ctx.parents else { unreachable!() };
            let g = ctx.grad;
            let ga = a.requires_grad().then(|| {
                if trans_a {
                    kernels::batched_matmul(batch, k, n, m, &b.data(), trans_b, g, true)
                } else {
                    kernels::batched_matmul(batch, m, n, k, g, false, &b.data(), !trans_b)
                }
            });
            let gb = b.requires_grad().then(|| {
                if trans_b {
                    kernels::batched_matmul(batch, n, m, k, g, true, &a.data(), trans_a)
                } else {
                    kernels::batched_matmul(batch, k, m, n, &a.data(), !trans_a, g, false)
                }
            });
            vec![ga, gb]
        },
    ))
}

/// Softmax over the channel axis for every `(batch, time)` column.
///
/// Entries where `allowed` is false receive probability zero; a column with
/// no allowed entry is all zeros.
pub fn softmax_channels(x: &Tensor, allowed: Option<Rc<Vec<bool>>>) -> Tensor {
    let s = x.shape();
    if let Some(m) = &allowed {
        assert_eq!(m.len(), s.numel(), "softmax mask size mismatch");
    }
    let src = x.data();
    let mut out = vec![0.0f32; s.numel()];
    for b in 0..s.batch {
        for t in 0..s.time {
            let idx = |c: usize| s.index(b, c, t);
            let ok = |c: usize| allowed.as_ref().is_none_or(|m| m[idx(c)]);
            let max = (0..s.channels)
                .filter(|&c| ok(c))
                .map(|c| src[idx(c)])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0f64;
            for c in 0..s.channels {
                if ok(c) {
                    let e = (src[idx(c)] - max).exp();
                    out[idx(c)] = e;
                    total += e as f64;
                }
            }
            let inv = (1.0 / total) as f32;
            for c in 0..s.channels {
                out[idx(c)] *= inv;
            }
        }
    }
    drop(src);
    Tensor::from_op(s, out, vec![x.clone()], move |ctx| {
        let y = ctx.output;
        let mut g = vec![0.0f32; s.numel()];
        for b in 0..s.batch {
            for t in 0..s.time {
                let dot: f64 = (0..s.channels)
                    .map(|c| {
                        let i = s.index(b, c, t);
                        (y[i] * ctx.grad[i]) as f64
                    })
                    .sum();
                for c in 0..s.channels {
                    let i = s.index(b, c, t);
                    g[i] = y[i] * (ctx.grad[i] - dot as f32);
                }
            }
        }
        vec![Some(g)]
    })
}

/// `out[b, c, t] = x[b, c, index[b][t]]`, or zero where the index is `None`.
pub fn gather_time(x: &Tensor, index: &[Vec<Option<usize>>], out_time: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(index.len(), s.batch, "gather_time: batch mismatch");
    let src = x.data();
    let mut out = vec![0.0f32; s.batch * s.channels * out_time];
    for (b, idx) in index.iter().enumerate() {
        assert!(idx.len() <= out_time);
        for c in 0..s.channels {
            let row = &src[(b * s.channels + c) * s.time..][..s.time];
            let dst = &mut out[(b * s.channels + c) * out_time..][..out_time];
            for (t, i) in idx.iter().enumerate() {
                if let Some(i) = *i {
                    dst[t] = row[i];
                }
            }
        }
    }
    drop(src);
    let index = index.to_vec();
    Tensor::from_op(
        Shape::new(s.batch, s.channels, out_time),
        out,
        vec![x.clone()],
        move |ctx| {
            let mut g = vec![0.0f32; s.numel()];
            for (b, idx) in index.iter().enumerate() {
                for c in 0..s.channels {
                    let src = &ctx.grad[(b * s.channels + c) * out_time..][..out_time];
                    let dst = &mut g[(b * s.channels + c) * s.time..][..s.time];
                    for (t, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            dst[i] += src[t];
                        }
                    }
                }
            }
            vec![Some(g)]
        },
    )
}

/// Per-channel statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Biased variance over the counted cells.
    pub var: Vec<f32>,
    pub count: usize,
}

/// Training-mode temporal batch normalization.
///
/// Statistics are taken per channel over every batch item and every valid
/// frame. Masked frames produce zeros and receive no gradient.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mask: Option<&TimeMask>,
    eps: f32,
) -> Result<(Tensor, BatchStats)> {
    let s = x.shape();
    if gamma.numel() != s.channels || beta.numel() != s.channels {
        return Err(Error::Shape("batch_norm: parameter size mismatch".into()));
    }
    let m = mask.map(|m| m.broadcast(s.channels));
    let valid = |i: usize| m.as_ref().is_none_or(|m| m[i] > 0.0);
    let count = match mask {
        Some(mask) => mask.lengths().iter().sum::<usize>(),
        None => s.batch * s.time,
    };
    if count < 2 {
        return Err(Error::InvalidArgument(
            "batch_norm: training mode needs at least two frames".into(),
        ));
    }
    let src = x.data();
    let (g, bt) = (gamma.data(), beta.data());
    let mut mean = vec![0.0f32; s.channels];
    let mut var = vec![0.0f32; s.channels];
    let mut inv_std = vec![0.0f32; s.channels];
    let mut xhat = vec![0.0f32; s.numel()];
    let mut out = vec![0.0f32; s.numel()];
    for c in 0..s.channels {
        let mut sum = 0.0f64;
        for b in 0..s.batch {
            for t in 0..s.time {
                let i = s.index(b, c, t);
                if valid(i) {
                    sum += src[i] as f64;
                }
            }
        }
        let mu = sum / count as f64;
        let mut sq = 0.0f64;
        for b in 0..s.batch {
            for t in 0..s.time {
                let i = s.index(b, c, t);
                if valid(i) {
                    let d = src[i] as f64 - mu;
                    sq += d * d;
                }
            }
        }
        let v = sq / count as f64;
        let inv = 1.0 / (v + eps as f64).sqrt();
        mean[c] = mu as f32;
        var[c] = v as f32;
        inv_std[c] = inv as f32;
        for b in 0..s.batch {
            for t in 0..s.time {
                let i = s.index(b, c, t);
                if valid(i) {
                    let xh = ((src[i] as f64 - mu) * inv) as f32;
                    xhat[i] = xh;
                    out[i] = g[c] * xh + bt[c];
                }
            }
        }
    }
    drop((src, g, bt));
    let stats = BatchStats {
        mean,
        var,
        count,
    };
    let y = Tensor::from_op(
        s,
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |ctx| {
            let [x, gamma, beta] = ctx.parents else { unreachable!() };
            let gam = gamma.data();
            let valid = |i: usize| m.as_ref().is_none_or(|m| m[i] > 0.0);
            let mut gx = vec![0.0f32; s.numel()];
            let mut ggamma = vec![0.0f32; s.channels];
            let mut gbeta = vec![0.0f32; s.channels];
            for c in 0..s.channels {
                let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                for b in 0..s.batch {
                    for t in 0..s.time {
                        let i = s.index(b, c, t);
                        if valid(i) {
                            sg += ctx.grad[i] as f64;
                            sgx += (ctx.grad[i] * xhat[i]) as f64;
                        }
                    }
                }
                ggamma[c] = sgx as f32;
                gbeta[c] = sg as f32;
                if x.requires_grad() {
                    let n = count as f64;
                    let k = gam[c] as f64 * inv_std[c] as f64 / n;
                    for b in 0..s.batch {
                        for t in 0..s.time {
                            let i = s.index(b, c, t);
                            if valid(i) {
                                let v = n * ctx.grad[i] as f64 - sg - xhat[i] as f64 * sgx;
                                gx[i] = (k * v) as f32;
                            }
                        }
                    }
                }
            }
            vec![
                x.requires_grad().then_some(gx),
                gamma.requires_grad().then_some(ggamma),
                beta.requires_grad().then_some(gbeta),
            ]
        },
    );
    Ok((y, stats))
}

/// Eval-mode batch norm: a fixed per-channel affine map from running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f32],
    running_var: &[f32],
    mask: Option<&TimeMask>,
    eps: f32,
) -> Result<Tensor> {
    let s = x.shape();
    if gamma.numel() != s.channels || running_mean.len() != s.channels {
        return Err(Error::Shape("batch_norm: parameter size mismatch".into()));
    }
    let inv: Vec<f32> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let rm = running_mean.to_vec();
    let m = mask.map(|m| m.broadcast(s.channels));
    let src = x.data();
    let (g, bt) = (gamma.data(), beta.data());
    let mut out = vec![0.0f32; s.numel()];
    for b in 0..s.batch {
        for c in 0..s.channels {
            for t in 0..s.time {
                let i = s.index(b, c, t);
                if m.as_ref().is_none_or(|m| m[i] > 0.0) {
                    out[i] = g[c] * (src[i] - rm[c]) * inv[c] + bt[c];
                }
            }
        }
    }
    drop((src, g, bt));
    Ok(Tensor::from_op(
        s,
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |ctx| {
            let [x, gamma, _] = ctx.parents else { unreachable!() };
            let (xd, gam) = (x.data(), gamma.data());
            let mut gx = vec![0.0f32; s.numel()];
            let mut gg = vec![0.0f32; s.channels];
            let mut gb = vec![0.0f32; s.channels];
            for b in 0..s.batch {
                for c in 0..s.channels {
                    for t in 0..s.time {
                        let i = s.index(b, c, t);
                        if m.as_ref().is_none_or(|m| m[i] > 0.0) {
                            let g = ctx.grad[i];
                            gx[i] = g * gam[c] * inv[c];
                            gg[c] += g * (xd[i] - rm[c]) * inv[c];
                            gb[c] += g;
                        }
                    }
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        },
    ))
}

/// Inference form of a plain residual block, `x + mask * bn_eval(relu(conv(x)))`,
/// evaluated without recording a graph. Same values as composing the ops.
#[allow(clippy::too_many_arguments)]
pub fn plain_block_eval(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dilation: usize,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f32],
    running_var: &[f32],
    mask: Option<&TimeMask>,
    eps: f32,
) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.batch != xs.channels || ws.channels != xs.channels {
        return Err(Error::Shape("residual block needs a square convolution".into()));
    }
    if dilation == 0 || ws.time == 0 || xs.time == 0 {
        return Err(Error::InvalidArgument("residual block: empty kernel, dilation or time axis".into()));
    }
    if gamma.numel() != xs.channels || running_mean.len() != xs.channels || bias.numel() != xs.channels {
        return Err(Error::Shape("residual block: parameter size mismatch".into()));
    }
    weight.check_finite("conv1d weights")?;
    bias.check_finite("conv1d bias")?;
    let lengths = mask.map_or_else(|| vec![xs.time; xs.batch], TimeMask::lengths);
    let inv: Vec<f32> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let geom = ConvGeom::new(xs.batch, xs.channels, xs.channels, xs.time, ws.time, dilation, false);
    let (g, b) = (gamma.data(), beta.data());
    let norm = kernels::EvalNorm {
        gamma: &g,
        beta: &b,
        mean: running_mean,
        inv_std: &inv,
    };
    let y = kernels::plain_block_inference(&geom, &x.data(), &weight.data(), &bias.data(), &norm, &lengths);
    Ok(Tensor::new(xs, y))
}

/// `sum_i weights[i] * x[i]` as a scalar.
pub fn weighted_sum(x: &Tensor, weights: &[f32]) -> Tensor {
    assert_eq!(x.numel(), weights.len(), "weighted_sum: length mismatch");
    let v: f64 = x.data().iter().zip(weights).map(|(a, w)| (*a as f64) * (*w as f64)).sum();
    let w = weights.to_vec();
    Tensor::from_op(Shape::scalar(), vec![v as f32], vec![x.clone()], move |ctx| {
        let g = ctx.grad[0];
        vec![Some(w.iter().map(|w| w * g).collect())]
    })
}

/// Weighted absolute error `sum_i w_i |pred_i - target_i|`.
pub fn l1_loss(pred: &Tensor, target: &[f32], weights: &[f32]) -> Tensor {
    assert_eq!(pred.numel(), target.len());
    assert_eq!(pred.numel(), weights.len());
    let v: f64 = pred
        .data()
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| (*w as f64) * ((*p - *t) as f64).abs())
        .sum();
    let target = target.to_vec();
    let w = weights.to_vec();
    Tensor::from_op(Shape::scalar(), vec![v as f32], vec![pred.clone()], move |ctx| {
        let g = ctx.grad[0];
        let p = ctx.parents[0].data();
        let out = p
            .iter()
            .zip(&target)
            .zip(&w)
            .map(|((p, t), w)| {
                let d = p - t;
                if d > 0.0 {
                    w * g
                } else if d < 0.0 {
                    -w * g
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(out)]
    })
}

/// Huber penalty of a single residual.
pub fn huber(residual: f32, delta: f32) -> f32 {
    let a = residual.abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Weighted Huber loss `sum_i w_i huber(pred_i - target_i)`.
pub fn huber_loss(pred: &Tensor, target: &[f32], weights: &[f32], delta: f32) -> Tensor {
    assert_eq!(pred.numel(), target.len());
    assert_eq!(pred.numel(), weights.len());
    let v: f64 = pred
        .data()
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, t), w)| *w as f64 * huber(p - t, delta) as f64)
        .sum();
    let target = target.to_vec();
    let w = weights.to_vec();
    Tensor::from_op(Shape::scalar(), vec![v as f32], vec![pred.clone()], move |ctx| {
        let g = ctx.grad[0];
        let p = ctx.parents[0].data();
        let out = p
            .iter()
            .zip(&target)
            .zip(&w)
            .map(|((p, t), w)| w * g * (p - t).clamp(-delta, delta))
            .collect();
        vec![Some(out)]
    })
}
