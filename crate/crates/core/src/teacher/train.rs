use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::attention::guided_attention_term;
use super::{shift_frames, TeacherModel};
use crate::audio::phonemes::PAD_ID;
use crate::audio::{MelSpectrogram, Normalization};
use crate::error::{Error, Result};
use crate::nn::ops::{self, TimeMask};
use crate::nn::{no_grad, Adam, Module, Shape, Tensor};

/// Padded batch of phoneme sequences and unit-interval target spectrograms.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    /// `B x N` row-major, padded with the padding id.
    pub ids: Vec<usize>,
    pub phoneme_lengths: Vec<usize>,
    /// `(B, bins, T)` targets, zero beyond each item's length.
    pub target: Vec<f32>,
    pub frame_lengths: Vec<usize>,
    pub bins: usize,
    pub max_phonemes: usize,
    pub max_frames: usize,
}

impl TeacherBatch {
    pub fn new(items: &[(&[usize], &MelSpectrogram)]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let bins = first.1.bins;
        for (ids, mel) in items {
            if ids.is_empty() || mel.frames == 0 {
                return Err(Error::InvalidArgument("batch items need phonemes and frames".into()));
            }
            if mel.bins != bins || !matches!(mel.normalization, Normalization::UnitInterval { .. }) {
                return Err(Error::InvalidArgument("teacher targets must be unit-interval mels of one size".into()));
            }
        }
        let max_phonemes = items.iter().map(|(i, _)| i.len()).max().unwrap_or(0);
        let max_frames = items.iter().map(|(_, m)| m.frames).max().unwrap_or(0);
        let mut ids = vec![PAD_ID; items.len() * max_phonemes];
        let mut target = vec![0.0f32; items.len() * bins * max_frames];
        for (b, (p, mel)) in items.iter().enumerate() {
            ids[b * max_phonemes..][..p.len()].copy_from_slice(p);
            for c in 0..bins {
                target[(b * bins + c) * max_frames..][..mel.frames]
                    .copy_from_slice(&mel.values[c * mel.frames..(c + 1) * mel.frames]);
            }
        }
        Ok(Self {
            ids,
            phoneme_lengths: items.iter().map(|(i, _)| i.len()).collect(),
            target,
            frame_lengths: items.iter().map(|(_, m)| m.frames).collect(),
            bins,
            max_phonemes,
            max_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.phoneme_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_lengths.is_empty()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.len(), self.bins, self.max_frames)
    }

    /// Query position rate `N_b / T_b` of every item.
    pub fn rates(&self) -> Vec<f32> {
        self.phoneme_lengths
            .iter()
            .zip(&self.frame_lengths)
            .map(|(&n, &t)| n as f32 / t as f32)
            .collect()
    }

    pub fn frame_mask(&self) -> TimeMask {
        TimeMask::from_lengths(&self.frame_lengths, self.max_frames)
    }

    /// Weights averaging over every valid `(item, bin, frame)` cell.
    pub fn mae_weights(&self) -> Vec<f32> {
        let valid: usize = self.frame_lengths.iter().sum::<usize>() * self.bins;
        let w = if valid > 0 { 1.0 / valid as f64 } else { 0.0 };
        self.frame_mask().broadcast(self.bins).iter().map(|&m| (m as f64 * w) as f32).collect()
    }
}

/// Strength of the three input degradations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub noise_std: f32,
    pub feedback_passes: usize,
    pub replace_prob: f64,
}

impl AugmentParams {
    pub const NONE: AugmentParams = AugmentParams {
        noise_std: 0.0,
        feedback_passes: 0,
        replace_prob: 0.0,
    };
}

/// Degraded copy of the batch targets, to be shifted into the model input.
///
/// Applies Gaussian noise (clipped to [0, 1]), then `feedback_passes`
/// gradient-free parallel passes that each replace the frames by the model's
/// predictions, then replaces random frames with frames drawn from other
/// positions of the same utterance.
pub fn augment(model: &TeacherModel, batch: &TeacherBatch, params: &AugmentParams, rng: &mut impl Rng) -> Result<Vec<f32>> {
    let shape = batch.shape();
    let mask = batch.frame_mask().broadcast(batch.bins);
    let mut frames = batch.target.clone();

    if params.noise_std > 0.0 {
        let normal = Normal::new(0.0f32, params.noise_std)
            .map_err(|e| Error::InvalidArgument(format!("noise std: {e}")))?;
        for (v, &m) in frames.iter_mut().zip(&mask) {
            if m > 0.0 {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }

    let rates = batch.rates();
    for _ in 0..params.feedback_passes {
        let input = Tensor::new(shape, shift_frames(&frames, shape));
        let out = no_grad(|| model.forward(&batch.ids, &batch.phoneme_lengths, &input, &batch.frame_lengths, &rates))?;
        frames = out.prediction.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    }

    if params.replace_prob > 0.0 {
        let p = params.replace_prob.min(1.0);
        let snapshot = frames.clone();
        for (b, &len) in batch.frame_lengths.iter().enumerate() {
            for t in 0..len {
                if rng.random_bool(p) {
                    let src = rng.random_range(0..len);
                    for c in 0..batch.bins {
                        frames[shape.index(b, c, t)] = snapshot[shape.index(b, c, src)];
                    }
                }
            }
        }
    }
    Ok(frames)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherStepStats {
    pub mae: f32,
    pub guided: f32,
    pub grad_norm: f32,
}

/// Loss components on a batch without updating anything.
pub fn teacher_losses(model: &TeacherModel, batch: &TeacherBatch, frames: &[f32], g: f64) -> Result<(Tensor, Tensor)> {
    let shape = batch.shape();
    let input = Tensor::new(shape, shift_frames(frames, shape));
    let out = model.forward(&batch.ids, &batch.phoneme_lengths, &input, &batch.frame_lengths, &batch.rates())?;
    let mae = ops::l1_loss(&out.prediction, &batch.target, &batch.mae_weights());
    let guided = guided_attention_term(&out.attention, &batch.phoneme_lengths, &batch.frame_lengths, g)?;
    Ok((mae, guided))
}

/// One optimization step on `MAE + guided attention`.
///
/// `frames` are the (possibly augmented) target-domain frames the input is
/// built from; pass `&batch.target` for plain teacher forcing.
pub fn teacher_training_step(
    model: &TeacherModel,
    batch: &TeacherBatch,
    frames: &[f32],
    optimizer: &mut Adam,
    lr: f32,
    g: f64,
) -> Result<TeacherStepStats> {
    let (mae, guided) = teacher_losses(model, batch, frames, g)?;
    let loss = ops::add(&mae, &guided);
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("teacher loss".into()));
    }
    loss.backward()?;
    let grad_norm = optimizer.step(&model.parameters(), lr)?;
    Ok(TeacherStepStats {
        mae: mae.item(),
        guided: guided.item(),
        grad_norm,
    })
}
