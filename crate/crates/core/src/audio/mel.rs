use super::stft::{reflect_pad, Stft};
use super::{AudioConfig, MelSpectrogram, Normalization};
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the triangular filters (HTK mel spacing).
pub fn mel_center_frequencies(config: &AudioConfig) -> Vec<f64> {
    mel_edges(config)[1..=config.n_mels].to_vec()
}

fn mel_edges(config: &AudioConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.f_min), hz_to_mel(config.f_max));
    (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect()
}

/// Row-major `(n_mels, n_fft/2 + 1)` matrix of unit-peak triangular filters.
pub fn mel_filterbank(config: &AudioConfig) -> Vec<f64> {
    let bins = config.n_fft / 2 + 1;
    let edges = mel_edges(config);
    let mut fb = vec![0.0; config.n_mels * bins];
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * config.sample_rate as f64 / config.n_fft as f64;
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            fb[m * bins + k] = rise.min(fall).max(0.0);
        }
    }
    fb
}

/// Magnitude spectrogram of a waveform with centered, reflect-padded frames.
///
/// Returns frame-major magnitudes of `n_fft/2 + 1` bins; the frame count is
/// `1 + samples / hop`.
pub fn magnitude_spectrogram(waveform: &[f32], config: &AudioConfig) -> Result<Vec<Vec<f64>>> {
    if waveform.len() < config.win_length {
        return Err(Error::InvalidArgument(format!(
            "waveform of {} samples is shorter than one window ({})",
            waveform.len(),
            config.win_length
        )));
    }
    let x: Vec<f64> = waveform.iter().map(|&v| v as f64).collect();
    let padded = reflect_pad(&x, config.n_fft / 2)?;
    let stft = Stft::new(config.n_fft, config.win_length, config.hop_length);
    Ok(stft
        .analyze(&padded)
        .into_iter()
        .map(|frame| frame.iter().map(|c| c.norm()).collect())
        .collect())
}

/// Log-mel spectrogram in the raw-log regime.
pub fn wav_to_mel(waveform: &[f32], config: &AudioConfig) -> Result<MelSpectrogram> {
    config.validate()?;
    let mags = magnitude_spectrogram(waveform, config)?;
    let fb = mel_filterbank(config);
    let bins = config.n_fft / 2 + 1;
    let frames = mags.len();
    let mut values = vec![0.0f32; config.n_mels * frames];
    for (t, mag) in mags.iter().enumerate() {
        for m in 0..config.n_mels {
            let row = &fb[m * bins..(m + 1) * bins];
            let e: f64 = row.iter().zip(mag).map(|(w, a)| w * a).sum();
            values[m * frames + t] = (e as f32).max(config.log_floor).ln();
        }
    }
    MelSpectrogram::new(config.n_mels, frames, values, Normalization::RawLog)
}
