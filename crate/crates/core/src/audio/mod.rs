//! Audio front end: dataset ingestion, phoneme tokenization, log-mel
//! extraction, the two normalization regimes and Griffin-Lim inversion.

pub mod dataset;
pub mod griffin_lim;
pub mod mel;
pub mod phonemes;
pub mod stft;
pub mod wav;

pub use dataset::{load_dataset, read_durations, write_durations, Utterance};
pub use griffin_lim::{griffin_lim, griffin_lim_traced, GriffinLimTrace};
pub use mel::{mel_filterbank, wav_to_mel};
pub use phonemes::{PhonemeVocabulary, PAD_ID};

use crate::error::{Error, Result};

/// Signal-processing constants shared by extraction and inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Magnitudes are clamped to this value before the logarithm.
    pub log_floor: f32,
    /// Fixed endpoints of the unit-interval rescaling.
    pub min_db: f32,
    pub max_db: f32,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-5,
            min_db: 1e-5f32.ln(),
            max_db: 2.0,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop_length == 0 || self.n_mels == 0 {
            return Err(Error::Config("n_fft, hop_length and n_mels must be positive".into()));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::Config("win_length must be in 1..=n_fft".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config("mel range must satisfy 0 <= f_min < f_max <= sample_rate/2".into()));
        }
        if !(self.log_floor > 0.0) || !(self.min_db < self.max_db) {
            return Err(Error::Config("log_floor must be positive and min_db < max_db".into()));
        }
        Ok(())
    }

    /// Frames produced for `samples` input samples with centered framing.
    pub fn frames_for(&self, samples: usize) -> usize {
        1 + samples / self.hop_length
    }

    /// Seconds of audio corresponding to `frames` hops.
    pub fn seconds(&self, frames: usize) -> f64 {
        frames as f64 * self.hop_length as f64 / self.sample_rate as f64
    }
}

/// Scalar corpus statistics for standardization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusStats {
    pub mean: f32,
    pub std: f32,
}

impl CorpusStats {
    /// Global mean and population standard deviation over every cell.
    pub fn compute<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for m in mels {
            for &v in &m.values {
                n += 1;
                sum += v as f64;
                sq += v as f64 * v as f64;
            }
        }
        if n == 0 {
            return Err(Error::Data("cannot compute statistics of an empty corpus".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok(Self {
            mean: mean as f32,
            std: var.sqrt() as f32,
        })
    }
}

/// State of the values held by a [`MelSpectrogram`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    RawLog,
    UnitInterval { min_db: f32, max_db: f32 },
    Standardized(CorpusStats),
}

/// Target regime for [`MelSpectrogram::normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormTarget {
    UnitInterval,
    Standardized,
}

/// Bin-major `(bins, frames)` mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    pub normalization: Normalization,
}

impl MelSpectrogram {
    pub fn new(bins: usize, frames: usize, values: Vec<f32>, normalization: Normalization) -> Result<Self> {
        if values.len() != bins * frames {
            return Err(Error::Shape(format!(
                "mel of {bins}x{frames} needs {} values, got {}",
                bins * frames,
                values.len()
            )));
        }
        Ok(Self {
            bins,
            frames,
            values,
            normalization,
        })
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    /// Converts a raw-log spectrogram into one of the two training regimes.
    pub fn normalize(&self, target: NormTarget, config: &AudioConfig, stats: Option<&CorpusStats>) -> Result<Self> {
        if self.normalization != Normalization::RawLog {
            return Err(Error::InvalidArgument("normalize expects a raw-log spectrogram".into()));
        }
        let (values, normalization) = match target {
            NormTarget::UnitInterval => {
                let (lo, hi) = (config.min_db, config.max_db);
                let span = hi - lo;
                let v: Vec<f32> = self
                    .values
                    .iter()
                    .map(|&x| ((x as f64 - lo as f64) / span as f64).clamp(0.0, 1.0) as f32)
                    .collect();
                assert!(v.iter().all(|x| (0.0..=1.0).contains(x)), "unit-interval mel out of range");
                (v, Normalization::UnitInterval { min_db: lo, max_db: hi })
            }
            NormTarget::Standardized => {
                let s = *stats.ok_or_else(|| {
                    Error::InvalidArgument("standardization requires corpus statistics".into())
                })?;
                if !(s.std > 0.0) {
                    return Err(Error::InvalidArgument(format!("corpus std must be positive, got {}", s.std)));
                }
                let v = self
                    .values
                    .iter()
                    .map(|&x| ((x as f64 - s.mean as f64) / s.std as f64) as f32)
                    .collect();
                (v, Normalization::Standardized(s))
            }
        };
        Ok(Self {
            values,
            normalization,
            ..*self
        })
    }

    /// Maps back to raw-log values using the parameters recorded at normalization.
    pub fn denormalize(&self) -> Self {
        let values = match self.normalization {
            Normalization::RawLog => self.values.clone(),
            Normalization::UnitInterval { min_db, max_db } => {
                let span = max_db as f64 - min_db as f64;
                self.values.iter().map(|&x| (min_db as f64 + x as f64 * span) as f32).collect()
            }
            Normalization::Standardized(s) => self
                .values
                .iter()
                .map(|&x| (x as f64 * s.std as f64 + s.mean as f64) as f32)
                .collect(),
        };
        Self {
            values,
            normalization: Normalization::RawLog,
            ..*self
        }
    }
}
