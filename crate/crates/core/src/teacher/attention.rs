//! Attention-matrix utilities: the guided-attention penalty, location
//! masking, duration extraction and diagnostics.

use std::io::Write;
use std::path::Path;

use super::{shift_frames, TeacherModel};
use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{no_grad, Shape, Tensor};

/// Row-major `(N, T)` matrix whose columns are distributions over phonemes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    pub phonemes: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl AttentionMatrix {
    pub fn new(phonemes: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if phonemes == 0 || frames == 0 {
            return Err(Error::InvalidArgument("attention matrix needs N >= 1 and T >= 1".into()));
        }
        if values.len() != phonemes * frames {
            return Err(Error::Shape(format!(
                "attention of {phonemes}x{frames} needs {} values, got {}",
                phonemes * frames,
                values.len()
            )));
        }
        Ok(Self {
            phonemes,
            frames,
            values,
        })
    }

    /// Item `b` of a `(B, N_max, T_max)` attention tensor, cropped to its lengths.
    pub fn from_batch(attention: &Tensor, b: usize, phonemes: usize, frames: usize) -> Result<Self> {
        let s = attention.shape();
        let data = attention.data();
        let mut values = Vec::with_capacity(phonemes * frames);
        for n in 0..phonemes {
            values.extend_from_slice(&data[s.index(b, n, 0)..][..frames]);
        }
        Self::new(phonemes, frames, values)
    }

    pub fn at(&self, n: usize, t: usize) -> f32 {
        self.values[n * self.frames + t]
    }

    /// Largest deviation of a column sum from 1.
    pub fn column_sum_error(&self) -> f64 {
        (0..self.frames)
            .map(|t| ((0..self.phonemes).map(|n| self.at(n, t) as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Per-frame argmax; ties resolve to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| {
                let mut best = 0;
                for n in 1..self.phonemes {
                    if self.at(n, t) > self.at(best, t) {
                        best = n;
                    }
                }
                best
            })
            .collect()
    }

    /// Binary greyscale image: one row per phoneme, one column per frame, white for mass.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.frames, self.phonemes).into_bytes();
        out.extend(self.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

/// `W[n, t] = 1 − exp(−(n/N − t/T)² / 2g²)` with 1-based n and t, row-major `(N, T)`.
pub fn guided_penalty(phonemes: usize, frames: usize, g: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(phonemes * frames);
    for n in 1..=phonemes {
        for t in 1..=frames {
            let d = n as f64 / phonemes as f64 - t as f64 / frames as f64;
            w.push(1.0 - (-(d * d) / (2.0 * g * g)).exp());
        }
    }
    w
}

/// Mean of `A ⊙ W` over all `N × T` cells.
pub fn guided_attention_loss(a: &AttentionMatrix, g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("guided attention width must be positive, got {g}")));
    }
    let w = guided_penalty(a.phonemes, a.frames, g);
    let total: f64 = a.values.iter().zip(&w).map(|(&x, w)| x as f64 * w).sum();
    Ok(total / (a.phonemes * a.frames) as f64)
}

/// Differentiable guided-attention term over a padded `(B, N, T)` attention batch.
///
/// Each item contributes the mean over its own valid `N_b × T_b` cells; the
/// result averages those means over the items.
pub fn guided_attention_term(
    attention: &Tensor,
    phoneme_lengths: &[usize],
    frame_lengths: &[usize],
    g: f64,
) -> Result<Tensor> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("guided attention width must be positive, got {g}")));
    }
    let s = attention.shape();
    let items = phoneme_lengths
        .iter()
        .zip(frame_lengths)
        .filter(|(&n, &t)| n > 0 && t > 0)
        .count();
    let mut weights = vec![0.0f32; s.numel()];
    if items > 0 {
        for (b, (&n_len, &t_len)) in phoneme_lengths.iter().zip(frame_lengths).enumerate() {
            if n_len == 0 || t_len == 0 {
                continue;
            }
            let w = guided_penalty(n_len, t_len, g);
            let k = 1.0 / ((n_len * t_len) as f64 * items as f64);
            for n in 0..n_len {
                for t in 0..t_len {
                    weights[s.index(b, n, t)] = (w[n * t_len + t] * k) as f32;
                }
            }
        }
    }
    Ok(crate::nn::ops::weighted_sum(attention, &weights))
}

/// Allowed phoneme range relative to the previously attended index `p`:
/// `[p − back, p + forward]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocationWindow {
    pub back: usize,
    pub forward: usize,
}

impl Default for LocationWindow {
    fn default() -> Self {
        Self { back: 0, forward: 3 }
    }
}

impl LocationWindow {
    pub fn range(&self, previous: Option<usize>, phonemes: usize) -> std::ops::RangeInclusive<usize> {
        match previous {
            None => 0..=phonemes - 1,
            Some(p) => p.saturating_sub(self.back)..=(p + self.forward).min(phonemes - 1),
        }
    }
}

/// Column-by-column argmax of row-major `(N, T)` scores, restricting each
/// column to the window around the previous column's choice.
pub fn masked_argmax(scores: &[f32], phonemes: usize, frames: usize, window: Option<LocationWindow>) -> Vec<usize> {
    let mut out = Vec::with_capacity(frames);
    let mut prev = None;
    for t in 0..frames {
        let range = match window {
            Some(w) => w.range(prev, phonemes),
            None => 0..=phonemes - 1,
        };
        let mut best = *range.start();
        for n in range {
            if scores[n * frames + t] > scores[best * frames + t] {
                best = n;
            }
        }
        out.push(best);
        prev = Some(best);
    }
    out
}

/// Number of frames whose attended index is each phoneme.
pub fn durations_from_argmax(indices: &[usize], phonemes: usize) -> Vec<usize> {
    let mut d = vec![0usize; phonemes];
    for &i in indices {
        d[i] += 1;
    }
    d
}

/// Mean `|n/N − t/T|` over frames at the per-frame attended index (1-based).
pub fn diagonality(indices: &[usize], phonemes: usize) -> f64 {
    let frames = indices.len();
    if frames == 0 {
        return 0.0;
    }
    indices
        .iter()
        .enumerate()
        .map(|(t, &n)| ((n + 1) as f64 / phonemes as f64 - (t + 1) as f64 / frames as f64).abs())
        .sum::<f64>()
        / frames as f64
}

/// Alignment of one utterance from a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub durations: Vec<usize>,
    pub indices: Vec<usize>,
    pub attention: AttentionMatrix,
}

/// Durations of every phoneme from the teacher-forced attention of one utterance.
///
/// Logits come from one parallel pass over the ground-truth frames; the
/// location window is then applied column by column, which is exact because
/// forced queries do not depend on earlier attention choices.
pub fn extract_durations(
    model: &TeacherModel,
    phoneme_ids: &[usize],
    mel: &MelSpectrogram,
    window: Option<LocationWindow>,
) -> Result<Alignment> {
    let (n, t) = (phoneme_ids.len(), mel.frames);
    if n == 0 || t == 0 {
        return Err(Error::InvalidArgument("alignment needs phonemes and frames".into()));
    }
    let shape = Shape::new(1, mel.bins, t);
    let input = Tensor::new(shape, shift_frames(&mel.values, shape));
    let rate = n as f32 / t as f32;
    let out = no_grad(|| model.forward(phoneme_ids, &[n], &input, &[t], &[rate]))?;
    let logits = out.logits.to_vec();
    let indices = masked_argmax(&logits, n, t, window);
    Ok(Alignment {
        durations: durations_from_argmax(&indices, n),
        indices,
        attention: AttentionMatrix::from_batch(&out.attention, 0, n, t)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_example() {
        assert_eq!(durations_from_argmax(&[0, 0, 1, 1, 2], 3), vec![2, 2, 1]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = AttentionMatrix::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let got = guided_attention_loss(&a, 0.2).unwrap();
        let want = 0.25 * (1.0 - (-3.125f64).exp());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.2390).abs() < 1e-4);
        assert!(guided_attention_loss(&a, 0.0).is_err());
    }

    #[test]
    fn window_confines_and_never_decreases() {
        // Scores favour going backwards; the window forbids it.
        let (n, t) = (6, 5);
        let mut s = vec![0.0f32; n * t];
        for (frame, best) in [5usize, 0, 4, 1, 3].iter().enumerate() {
            s[best * t + frame] = 1.0;
        }
        let idx = masked_argmax(&s, n, t, Some(LocationWindow::default()));
        assert_eq!(idx[0], 5);
        assert!(idx.windows(2).all(|w| w[0] <= w[1] && w[1] <= w[0] + 3));
        assert_eq!(masked_argmax(&s, n, t, None), vec![5, 0, 4, 1, 3]);
    }

    #[test]
    fn pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        AttentionMatrix::new(2, 3, vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap().write_pgm(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
    }
}
