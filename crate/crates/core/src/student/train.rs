use super::{expand_encodings, ssim, StudentModel};
use crate::audio::phonemes::PAD_ID;
use crate::audio::{MelSpectrogram, Normalization};
use crate::error::{Error, Result};
use crate::nn::ops::{self, TimeMask};
use crate::nn::{Adam, Module, Shape, Tensor};

pub const HUBER_DELTA: f32 = 1.0;

/// Padded batch of phonemes, teacher durations and standardized targets.
#[derive(Clone, Debug)]
pub struct StudentBatch {
    pub ids: Vec<usize>,
    pub phoneme_lengths: Vec<usize>,
    /// Per item, one duration per phoneme (unpadded).
    pub durations: Vec<Vec<usize>>,
    /// `(B, bins, T)`, zero past each item's length.
    pub target: Vec<f32>,
    pub frame_lengths: Vec<usize>,
    pub bins: usize,
    pub max_phonemes: usize,
    pub max_frames: usize,
}

impl StudentBatch {
    pub fn new(items: &[(&[usize], &[usize], &MelSpectrogram)]) -> Result<Self> {
        let bins = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?
            .2
            .bins;
        for (ids, d, mel) in items {
            if ids.is_empty() || ids.len() != d.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} phonemes with {} durations",
                    ids.len(),
                    d.len()
                )));
            }
            if d.iter().sum::<usize>() != mel.frames {
                return Err(Error::Data(format!(
                    "durations sum to {} but the spectrogram has {} frames",
                    d.iter().sum::<usize>(),
                    mel.frames
                )));
            }
            if mel.bins != bins || !matches!(mel.normalization, Normalization::Standardized(_)) {
                return Err(Error::InvalidArgument("student targets must be standardized mels of one size".into()));
            }
        }
        let max_phonemes = items.iter().map(|i| i.0.len()).max().unwrap_or(0);
        let max_frames = items.iter().map(|i| i.2.frames).max().unwrap_or(0);
        let mut ids = vec![PAD_ID; items.len() * max_phonemes];
        let mut target = vec![0.0f32; items.len() * bins * max_frames];
        for (b, (p, _, mel)) in items.iter().enumerate() {
            ids[b * max_phonemes..][..p.len()].copy_from_slice(p);
            for c in 0..bins {
                target[(b * bins + c) * max_frames..][..mel.frames]
                    .copy_from_slice(&mel.values[c * mel.frames..][..mel.frames]);
            }
        }
        Ok(Self {
            ids,
            phoneme_lengths: items.iter().map(|i| i.0.len()).collect(),
            durations: items.iter().map(|i| i.1.to_vec()).collect(),
            target,
            frame_lengths: items.iter().map(|i| i.2.frames).collect(),
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

    pub fn mae_weights(&self) -> Vec<f32> {
        let valid = self.frame_lengths.iter().sum::<usize>() * self.bins;
        let w = 1.0 / valid as f64;
        TimeMask::from_lengths(&self.frame_lengths, self.max_frames)
            .broadcast(self.bins)
            .iter()
            .map(|&m| (m as f64 * w) as f32)
            .collect()
    }

    /// `ln(1 + d)` targets laid out `(B, 1, N)` and the matching mean weights.
    pub fn log_duration_targets(&self) -> (Vec<f32>, Vec<f32>) {
        let n = self.max_phonemes;
        let valid: usize = self.phoneme_lengths.iter().sum();
        let mut target = vec![0.0f32; self.len() * n];
        let mut weights = vec![0.0f32; self.len() * n];
        for (b, d) in self.durations.iter().enumerate() {
            for (i, &v) in d.iter().enumerate() {
                target[b * n + i] = (v as f64).ln_1p() as f32;
                weights[b * n + i] = (1.0 / valid as f64) as f32;
            }
        }
        (target, weights)
    }
}

/// The three loss terms; `ssim` holds the similarity index, not `1 − SSIM`.
pub struct StudentLosses {
    pub mae: Tensor,
    pub ssim: Tensor,
    pub duration: Tensor,
}

impl StudentLosses {
    /// `MAE + (1 − SSIM) + Huber`.
    pub fn total(&self) -> Tensor {
        let dissimilarity = ops::add_const(&ops::scale(&self.ssim, -1.0), &[1.0]);
        ops::add(&ops::add(&self.mae, &dissimilarity), &self.duration)
    }
}

/// Loss terms with expansion driven by the batch's ground-truth durations.
pub fn student_losses(model: &StudentModel, batch: &StudentBatch, train: bool) -> Result<StudentLosses> {
    let enc = model.encode(&batch.ids, &batch.phoneme_lengths, train)?;
    let log_d = model.predict_durations(&enc, &batch.phoneme_lengths, train)?;
    let (expanded, frames) = expand_encodings(&enc, &batch.durations)?;
    debug_assert_eq!(frames, batch.frame_lengths);
    let pred = model.decode(&expanded, &batch.frame_lengths, train)?;
    let (d_target, d_weights) = batch.log_duration_targets();
    Ok(StudentLosses {
        mae: ops::l1_loss(&pred, &batch.target, &batch.mae_weights()),
        ssim: ssim(&pred, &batch.target, &batch.frame_lengths)?,
        duration: ops::huber_loss(&log_d, &d_target, &d_weights, HUBER_DELTA),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentStepStats {
    pub mae: f32,
    pub ssim: f32,
    pub duration: f32,
    pub grad_norm: f32,
}

pub fn student_training_step(
    model: &StudentModel,
    batch: &StudentBatch,
    optimizer: &mut Adam,
    lr: f32,
) -> Result<StudentStepStats> {
    let losses = student_losses(model, batch, true)?;
    let total = losses.total();
    if !total.item().is_finite() {
        return Err(Error::NonFinite("student loss".into()));
    }
    total.backward()?;
    let grad_norm = optimizer.step(&model.parameters(), lr)?;
    Ok(StudentStepStats {
        mae: losses.mae.item(),
        ssim: losses.ssim.item(),
        duration: losses.duration.item(),
        grad_norm,
    })
}
