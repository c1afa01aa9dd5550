//! Short-time Fourier transform with a least-squares inverse.
//!
//! Frames start every `hop` samples with no implicit padding; callers that
//! want centered frames pad with [`reflect_pad`] first. The inverse is the
//! weighted overlap-add that minimizes the distance between the STFT of its
//! result and the supplied (possibly inconsistent) complex frames.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Periodic Hann window of `win_length`, zero-padded symmetrically to `n_fft`.
pub fn hann_window(win_length: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let offset = (n_fft - win_length) / 2;
    for n in 0..win_length {
        w[offset + n] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_length as f64).cos();
    }
    w
}

/// Mirrors `pad` samples on each side without repeating the edge sample.
pub fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.len() <= pad {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is too short for reflect padding of {pad}",
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(x.len() + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[x.len() - 2 - i]));
    Ok(out)
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(win_length, n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Number of whole frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n_fft {
            0
        } else {
            1 + (len - self.n_fft) / self.hop
        }
    }

    /// Signal length spanned exactly by `frames` frames.
    pub fn span(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.n_fft
    }

    /// Non-negative-frequency spectra of every frame, frame-major.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let frames = self.frame_count(x.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[start + n] * self.window[n], 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Least-squares inverse onto a signal of `self.span(frames.len())` samples.
    ///
    /// Each half spectrum is extended with Hermitian symmetry, so the result
    /// is the orthogonal projection of the frames onto consistent spectrograms
    /// under the full-spectrum norm.
    pub fn synthesize(&self, frames: &[Vec<Complex64>]) -> Vec<f64> {
        let len = self.span(frames.len());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let bins = self.bins();
        for (t, spec) in frames.iter().enumerate() {
            buf[..bins].copy_from_slice(spec);
            for k in bins..self.n_fft {
                buf[k] = spec[self.n_fft - k].conj();
            }
            // The DC and Nyquist bins of a real frame carry no imaginary part.
            buf[0].im = 0.0;
            if self.n_fft % 2 == 0 {
                buf[self.n_fft / 2].im = 0.0;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = t * self.hop;
            for n in 0..self.n_fft {
                let w = self.window[n];
                out[start + n] += w * buf[n].re / self.n_fft as f64;
                norm[start + n] += w * w;
            }
        }
        for (o, z) in out.iter_mut().zip(&norm) {
            *o = if *z > 1e-12 { *o / z } else { 0.0 };
        }
        out
    }
}

/// Full-spectrum squared norm of half-spectrum frames: interior bins count twice.
pub fn hermitian_energy(frames: &[Vec<f64>], n_fft: usize) -> f64 {
    let nyquist = if n_fft % 2 == 0 { Some(n_fft / 2) } else { None };
    frames
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .map(|(k, v)| {
                    let w = if k == 0 || Some(k) == nyquist { 1.0 } else { 2.0 };
                    w * v * v
                })
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(reflect_pad(&x, 2).unwrap(), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
        assert!(reflect_pad(&x, 4).is_err());
    }

    #[test]
    fn synthesize_inverts_analyze() {
        let stft = Stft::new(64, 64, 16);
        let len = stft.span(20);
        let x: Vec<f64> = (0..len).map(|n| ((n * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let y = stft.synthesize(&stft.analyze(&x));
        // The first and last sample are seen only through a zero window tap.
        for n in 1..len - 1 {
            assert!((x[n] - y[n]).abs() < 1e-9, "sample {n}");
        }
    }

    #[test]
    fn hann_window_endpoints() {
        let w = hann_window(8, 8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        let padded = hann_window(4, 8);
        assert_eq!(&padded[..2], &[0.0, 0.0]);
        assert_eq!(&padded[6..], &[0.0, 0.0]);
    }
}
