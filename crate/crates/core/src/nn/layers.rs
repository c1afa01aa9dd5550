//! Parameterized layers the two networks are assembled from.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ops::{self, TimeMask};
use super::kernels::math_threads;
use super::tensor::{grad_enabled, Shape, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Parameter,
    Buffer,
}

/// Anything owning named tensors.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind));

    fn named_tensors(&self) -> Vec<(String, Tensor, TensorKind)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t, k| out.push((n, t.clone(), k)));
        out
    }

    fn parameters(&self) -> Vec<(String, Tensor)> {
        self.named_tensors()
            .into_iter()
            .filter(|(_, _, k)| *k == TensorKind::Parameter)
            .map(|(n, t, _)| (n, t))
            .collect()
    }

    fn zero_grad(&self) {
        for (_, t) in self.parameters() {
            t.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform_init(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// 1D convolution parameters: weight `(out, in, kernel)`, bias `(1, out, 1)`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
    pub causal: bool,
}

impl Conv1d {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        causal: bool,
    ) -> Self {
        let fan_in = in_channels * kernel_size;
        let bound = 1.0 / (fan_in as f32).sqrt();
        let ws = Shape::new(out_channels, in_channels, kernel_size);
        Self {
            weight: Tensor::parameter(ws, uniform_init(rng, ws.numel(), bound)),
            bias: Tensor::parameter(
                Shape::new(1, out_channels, 1),
                uniform_init(rng, out_channels, bound),
            ),
            dilation,
            causal,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, dilation: usize, causal: bool) -> Self {
        Self {
            weight,
            bias,
            dilation,
            causal,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().batch
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape().time
    }

    /// Frames of context one layer adds: `(kernel - 1) * dilation`.
    pub fn reach(&self) -> usize {
        (self.kernel_size() - 1) * self.dilation
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv1d(x, &self.weight, &self.bias, self.dilation, self.causal)
    }
}

impl Module for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        f(join(prefix, "weight"), &self.weight, TensorKind::Parameter);
        f(join(prefix, "bias"), &self.bias, TensorKind::Parameter);
    }
}

/// Per-time-step fully connected layer.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Self {
        let c = Conv1d::new(rng, in_features, out_features, 1, 1, false);
        Self {
            weight: c.weight,
            bias: c.bias,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.weight, &self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        f(join(prefix, "weight"), &self.weight, TensorKind::Parameter);
        f(join(prefix, "bias"), &self.bias, TensorKind::Parameter);
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    /// `(vocab, dim, 1)`
    pub table: Tensor,
}

impl Embedding {
    pub fn new(rng: &mut impl Rng, vocab: usize, dim: usize, std: f32) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..vocab * dim).map(|_| normal.sample(rng)).collect();
        Self {
            table: Tensor::parameter(Shape::new(vocab, dim, 1), data),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape().batch
    }

    pub fn dim(&self) -> usize {
        self.table.shape().channels
    }

    pub fn forward(&self, ids: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        ops::embedding(ids, batch, len, &self.table)
    }
}

impl Module for Embedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        f(join(prefix, "table"), &self.table, TensorKind::Parameter);
    }
}

/// Temporal batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        let s = Shape::new(1, channels, 1);
        Self {
            gamma: Tensor::parameter(s, vec![1.0; channels]),
            beta: Tensor::parameter(s, vec![0.0; channels]),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::full(s, 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// averages; eval mode applies the running statistics only.
    pub fn forward(&self, x: &Tensor, mask: Option<&TimeMask>, train: bool) -> Result<Tensor> {
        if train {
            let (y, stats) = ops::batch_norm_train(x, &self.gamma, &self.beta, mask, self.eps)?;
            let unbias = stats.count as f32 / (stats.count as f32 - 1.0);
            let m = self.momentum;
            for (r, v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
            Ok(y)
        } else {
            ops::batch_norm_eval(
                x,
                &self.gamma,
                &self.beta,
                &self.running_mean.data(),
                &self.running_var.data(),
                mask,
                self.eps,
            )
        }
    }
}

impl Module for BatchNorm1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        f(join(prefix, "gamma"), &self.gamma, TensorKind::Parameter);
        f(join(prefix, "beta"), &self.beta, TensorKind::Parameter);
        f(join(prefix, "running_mean"), &self.running_mean, TensorKind::Buffer);
        f(join(prefix, "running_var"), &self.running_var, TensorKind::Buffer);
    }
}

/// WaveNet-style gated block: a dilated convolution whose output is split
/// into a tanh filter half and a sigmoid gate half, multiplied, and projected
/// back to the residual width by a 1x1 convolution.
#[derive(Clone, Debug)]
pub struct GatedResidualBlock {
    pub conv: Conv1d,
    pub projection: Conv1d,
}

impl GatedResidualBlock {
    pub fn new(
        rng: &mut impl Rng,
        residual_channels: usize,
        gate_channels: usize,
        kernel_size: usize,
        dilation: usize,
        causal: bool,
    ) -> Result<Self> {
        if gate_channels % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "gate channels must be even, got {gate_channels}"
            )));
        }
        Ok(Self {
            conv: Conv1d::new(rng, residual_channels, gate_channels, kernel_size, dilation, causal),
            projection: Conv1d::new(rng, gate_channels / 2, residual_channels, 1, 1, false),
        })
    }

    pub fn from_parts(conv: Conv1d, projection: Conv1d) -> Result<Self> {
        let gate = conv.out_channels();
        if gate % 2 != 0 {
            return Err(Error::InvalidArgument(format!("gate channels must be even, got {gate}")));
        }
        if projection.in_channels() != gate / 2 || projection.out_channels() != conv.in_channels() {
            return Err(Error::Shape("gated block projection does not match conv".into()));
        }
        Ok(Self { conv, projection })
    }

    /// Returns `(residual, skip)`.
    pub fn forward(&self, x: &Tensor, mask: Option<&TimeMask>) -> Result<(Tensor, Tensor)> {
        let half = self.conv.out_channels() / 2;
        let h = self.conv.forward(x)?;
        let filter = ops::tanh(&ops::narrow_channels(&h, 0, half));
        let gate = ops::sigmoid(&ops::narrow_channels(&h, half, half));
        let mut skip = self.projection.forward(&ops::mul(&filter, &gate))?;
        if let Some(m) = mask {
            skip = ops::apply_mask(&skip, m);
        }
        Ok((ops::add(x, &skip), skip))
    }
}

impl Module for GatedResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.projection.visit(&join(prefix, "projection"), f);
    }
}

/// Stack of gated blocks whose skip outputs are summed.
#[derive(Clone, Debug)]
pub struct GatedStack {
    pub blocks: Vec<GatedResidualBlock>,
}

impl GatedStack {
    pub fn new(
        rng: &mut impl Rng,
        residual_channels: usize,
        gate_channels: usize,
        kernel_size: usize,
        dilations: &[usize],
        causal: bool,
    ) -> Result<Self> {
        let blocks = dilations
            .iter()
            .map(|&d| GatedResidualBlock::new(rng, residual_channels, gate_channels, kernel_size, d, causal))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&TimeMask>) -> Result<Tensor> {
        let mut h = x.clone();
        let mut total: Option<Tensor> = None;
        for block in &self.blocks {
            let (res, skip) = block.forward(&h, mask)?;
            h = res;
            total = Some(match total {
                None => skip,
                Some(t) => ops::add(&t, &skip),
            });
        }
        Ok(total.unwrap_or_else(|| x.clone()))
    }

    /// Total receptive field of the stack in frames.
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks.iter().map(|b| b.conv.reach()).sum::<usize>()
    }
}

impl Module for GatedStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Convolution, ReLU, temporal batch norm, then a residual add.
#[derive(Clone, Debug)]
pub struct PlainResidualBlock {
    pub conv: Conv1d,
    pub norm: BatchNorm1d,
}

impl PlainResidualBlock {
    pub fn new(rng: &mut impl Rng, channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            conv: Conv1d::new(rng, channels, channels, kernel_size, dilation, false),
            norm: BatchNorm1d::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&TimeMask>, train: bool) -> Result<Tensor> {
        if !train && !grad_enabled() && math_threads() == 1 && !self.conv.causal {
            let n = &self.norm;
            return ops::plain_block_eval(
                x,
                &self.conv.weight,
                &self.conv.bias,
                self.conv.dilation,
                &n.gamma,
                &n.beta,
                &n.running_mean.data(),
                &n.running_var.data(),
                mask,
                n.eps,
            );
        }
        let h = ops::relu(&self.conv.forward(x)?);
        let h = self.norm.forward(&h, mask, train)?;
        Ok(ops::add(x, &h))
    }
}

impl Module for PlainResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

/// Activation size per sub-batch when a stack runs in inference mode.
const INFERENCE_CHUNK_BYTES: usize = 512 * 1024;

/// Sequence of plain residual blocks.
#[derive(Clone, Debug)]
pub struct PlainStack {
    pub blocks: Vec<PlainResidualBlock>,
}

impl PlainStack {
    pub fn new(rng: &mut impl Rng, channels: usize, kernel_size: usize, dilations: &[usize]) -> Self {
        Self {
            blocks: dilations
                .iter()
                .map(|&d| PlainResidualBlock::new(rng, channels, kernel_size, d))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&TimeMask>, train: bool) -> Result<Tensor> {
        let s = x.shape();
        let item_bytes = s.channels * s.time * std::mem::size_of::<f32>();
        let per_chunk = (INFERENCE_CHUNK_BYTES / item_bytes.max(1)).max(1);
        if train || grad_enabled() || s.batch <= per_chunk {
            return self.forward_all(x, mask, train);
        }
        // Items are independent in eval mode; running the whole stack on a
        // few at a time keeps their activations in cache between blocks.
        let lengths = mask.map_or_else(|| vec![s.time; s.batch], TimeMask::lengths);
        let data = x.data();
        let item = s.channels * s.time;
        let mut out = Vec::with_capacity(s.numel());
        for first in (0..s.batch).step_by(per_chunk) {
            let n = per_chunk.min(s.batch - first);
            let part = Tensor::new(Shape::new(n, s.channels, s.time), data[first * item..][..n * item].to_vec());
            let m = TimeMask::from_lengths(&lengths[first..first + n], s.time);
            out.extend_from_slice(&self.forward_all(&part, Some(&m), false)?.data());
        }
        Ok(Tensor::new(s, out))
    }

    fn forward_all(&self, x: &Tensor, mask: Option<&TimeMask>, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h, mask, train)?;
        }
        Ok(h)
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.blocks.iter().map(|b| b.conv.reach()).sum::<usize>()
    }
}

impl Module for PlainStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &i.to_string()), f);
        }
    }
}
