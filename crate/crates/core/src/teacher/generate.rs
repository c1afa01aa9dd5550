//! Frame-by-frame generation.
//!
//! Every stage of the teacher that looks at frames is causal, so the output
//! at frame `t` only needs the last `receptive field` input frames. Each step
//! re-runs the encoder and decoder over that window and keeps the attention
//! contexts of earlier steps, which is what makes location masking possible.

use std::rc::Rc;

use super::attention::{durations_from_argmax, AttentionMatrix, LocationWindow};
use super::TeacherModel;
use crate::error::{Error, Result};
use crate::nn::{no_grad, ops, Shape, Tensor};

/// Consecutive frames on the final phoneme that end free-running generation.
pub const END_HOLD_FRAMES: usize = 10;
/// Consecutive near-silent frames that end free-running generation.
pub const SILENCE_FRAMES: usize = 20;
/// Mean unit-interval frame value below which a frame counts as silent.
pub const SILENCE_LEVEL: f32 = 0.1;

#[derive(Clone, Debug)]
pub struct Generation {
    /// Bin-major `(bins, frames)` unit-interval values.
    pub mel: Vec<f32>,
    pub frames: usize,
    pub attention: AttentionMatrix,
    /// Attended phoneme per frame.
    pub indices: Vec<usize>,
    /// True when generation stopped at `max_frames` without an end signal.
    pub reached_max: bool,
}

impl Generation {
    pub fn durations(&self) -> Vec<usize> {
        durations_from_argmax(&self.indices, self.attention.phonemes)
    }
}

/// Free-running generation from the phonemes alone.
pub fn sequential_generate(
    model: &TeacherModel,
    ids: &[usize],
    rate: f32,
    max_frames: usize,
    window: Option<LocationWindow>,
) -> Result<Generation> {
    run(model, ids, rate, max_frames, None, window)
}

/// Step-by-step generation conditioned on ground-truth frames (bin-major, `frames` long).
pub fn sequential_teacher_forced(
    model: &TeacherModel,
    ids: &[usize],
    truth: &[f32],
    frames: usize,
    rate: f32,
    window: Option<LocationWindow>,
) -> Result<Generation> {
    if truth.len() != model.config.mel_bins * frames {
        return Err(Error::Shape("ground-truth frames do not match the mel size".into()));
    }
    run(model, ids, rate, frames, Some(truth), window)
}

fn run(
    model: &TeacherModel,
    ids: &[usize],
    rate: f32,
    max_frames: usize,
    forced: Option<&[f32]>,
    window: Option<LocationWindow>,
) -> Result<Generation> {
    let n = ids.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot generate from zero phonemes".into()));
    }
    if max_frames == 0 {
        return Err(Error::InvalidArgument("max_frames must be positive".into()));
    }
    let bins = model.config.mel_bins;
    let att_dim = model.config.attention_dim;
    let span = model.spectrogram_encoder.receptive_field() + model.decoder.receptive_field() - 1;
    no_grad(|| {
        let memory = model.encode_phonemes(ids, &[n])?;
        let mut inputs: Vec<Vec<f32>> = Vec::new();
        let mut outputs: Vec<Vec<f32>> = Vec::new();
        let mut contexts: Vec<Vec<f32>> = Vec::new();
        let mut attention_cols: Vec<Vec<f32>> = Vec::new();
        let mut indices: Vec<usize> = Vec::new();
        let (mut held, mut silent) = (0usize, 0usize);
        let mut stopped = false;

        for t in 0..max_frames {
            inputs.push(match (t, forced) {
                (0, _) => vec![0.0; bins],
                (_, Some(truth)) => (0..bins).map(|c| truth[c * max_frames + t - 1]).collect(),
                (_, None) => outputs[t - 1].clone(),
            });
            let lo = (t + 1).saturating_sub(span);
            let len = t + 1 - lo;
            let x = Tensor::new(Shape::new(1, bins, len), columns_to_rows(&inputs[lo..], bins));
            let encoded = model.encode_frames(&x, None)?;
            let queries = model.queries(&encoded, lo, &[rate])?;
            let logits = model.attention_logits(&memory, &queries)?;

            let last: Vec<f32> = (0..n).map(|p| logits.at(0, p, len - 1)).collect();
            let range = match window {
                Some(w) => w.range(indices.last().copied(), n),
                None => 0..=n - 1,
            };
            let allowed: Vec<bool> = (0..n).map(|p| range.contains(&p)).collect();
            let a = ops::softmax_channels(&Tensor::new(Shape::new(1, n, 1), last), Some(Rc::new(allowed)));
            let a_col = a.to_vec();
            let mut best = *range.start();
            for p in range {
                if a_col[p] > a_col[best] {
                    best = p;
                }
            }
            indices.push(best);
            let context = ops::matmul(&memory.values, false, &a, false)?;
            contexts.push(context.to_vec());
            attention_cols.push(a_col);

            let ctx = Tensor::new(Shape::new(1, att_dim, len), columns_to_rows(&contexts[lo..], att_dim));
            let pred = model.decode(&ctx, &encoded, None)?;
            let frame: Vec<f32> = (0..bins).map(|c| pred.at(0, c, len - 1)).collect();

            if forced.is_none() {
                held = if best == n - 1 { held + 1 } else { 0 };
                let level = frame.iter().sum::<f32>() / bins as f32;
                silent = if level < SILENCE_LEVEL { silent + 1 } else { 0 };
            }
            outputs.push(frame);
            if held >= END_HOLD_FRAMES || silent >= SILENCE_FRAMES {
                stopped = true;
                break;
            }
        }

        let frames = outputs.len();
        let mut att = vec![0.0f32; n * frames];
        for (t, col) in attention_cols.iter().enumerate() {
            for p in 0..n {
                att[p * frames + t] = col[p];
            }
        }
        Ok(Generation {
            mel: columns_to_rows(&outputs, bins),
            frames,
            attention: AttentionMatrix::new(n, frames, att)?,
            indices,
            reached_max: forced.is_none() && !stopped,
        })
    })
}

/// Frame columns to a channel-major `(channels, frames)` buffer.
fn columns_to_rows(cols: &[Vec<f32>], channels: usize) -> Vec<f32> {
    let len = cols.len();
    let mut out = vec![0.0f32; channels * len];
    for (t, col) in cols.iter().enumerate() {
        for c in 0..channels {
            out[c * len + t] = col[c];
        }
    }
    out
}
