//! Griffin-Lim phase recovery from a log-mel spectrogram.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::mel_filterbank;
use super::stft::{hermitian_energy, Stft};
use super::{AudioConfig, MelSpectrogram, Normalization};
use crate::error::{Error, Result};

/// Reconstruction plus the spectral-convergence error after every iteration.
#[derive(Clone, Debug)]
pub struct GriffinLimTrace {
    pub signal: Vec<f32>,
    /// `‖|STFT(x_i)| − S‖ / ‖S‖` over the full spectrum, one entry per iteration.
    pub spectral_convergence: Vec<f64>,
}

/// Linear magnitudes (frame-major) recovered through the filterbank pseudo-inverse.
pub fn mel_to_linear(mel: &MelSpectrogram, config: &AudioConfig) -> Result<Vec<Vec<f64>>> {
    if mel.normalization != Normalization::RawLog {
        return Err(Error::InvalidArgument("Griffin-Lim expects a raw-log spectrogram".into()));
    }
    if mel.bins != config.n_mels {
        return Err(Error::Shape(format!("mel has {} bins, config expects {}", mel.bins, config.n_mels)));
    }
    let bins = config.n_fft / 2 + 1;
    let fb = DMatrix::from_row_slice(config.n_mels, bins, &mel_filterbank(config));
    let pinv = fb
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidArgument(format!("filterbank pseudo-inverse failed: {e}")))?;
    let energies = DMatrix::from_fn(config.n_mels, mel.frames, |m, t| (mel.at(m, t) as f64).exp());
    let linear = pinv * energies;
    Ok((0..mel.frames)
        .map(|t| (0..bins).map(|k| linear[(k, t)].max(0.0)).collect())
        .collect())
}

/// Waveform of `hop * (T - 1)` samples, peak-normalized to 1.
pub fn griffin_lim(mel: &MelSpectrogram, config: &AudioConfig, iterations: usize, seed: u64) -> Result<Vec<f32>> {
    let target = mel_to_linear(mel, config)?;
    Ok(griffin_lim_traced(&target, config, iterations, seed)?.signal)
}

/// Griffin-Lim on explicit frame-major target magnitudes.
///
/// Iterations run on the padded signal domain so each inverse is an exact
/// least-squares projection; the centering pad is trimmed from the result.
pub fn griffin_lim_traced(
    target: &[Vec<f64>],
    config: &AudioConfig,
    iterations: usize,
    seed: u64,
) -> Result<GriffinLimTrace> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("Griffin-Lim needs at least one iteration".into()));
    }
    let bins = config.n_fft / 2 + 1;
    if target.is_empty() || target.iter().any(|f| f.len() != bins) {
        return Err(Error::Shape(format!("target must be non-empty frames of {bins} bins")));
    }
    let stft = Stft::new(config.n_fft, config.win_length, config.hop_length);
    let target_norm = hermitian_energy(target, config.n_fft).sqrt().max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex64>> = target
        .iter()
        .map(|f| {
            f.iter()
                .map(|&a| Complex64::from_polar(a, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();

    let mut errors = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    for _ in 0..iterations {
        signal = stft.synthesize(&spec);
        let rebuilt = stft.analyze(&signal);
        let diff: Vec<Vec<f64>> = rebuilt
            .iter()
            .zip(target)
            .map(|(y, s)| y.iter().zip(s).map(|(c, a)| c.norm() - a).collect())
            .collect();
        errors.push(hermitian_energy(&diff, config.n_fft).sqrt() / target_norm);
        for ((x, y), s) in spec.iter_mut().zip(&rebuilt).zip(target) {
            for ((xk, yk), &a) in x.iter_mut().zip(y).zip(s) {
                let m = yk.norm();
                *xk = if m > 0.0 { yk * (a / m) } else { Complex64::new(a, 0.0) };
            }
        }
    }

    let pad = config.n_fft / 2;
    let len = config.hop_length * (target.len() - 1);
    let trimmed = &signal[pad..pad + len];
    let peak = trimmed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    Ok(GriffinLimTrace {
        signal: trimmed.iter().map(|v| (v * scale) as f32).collect(),
        spectral_convergence: errors,
    })
}
