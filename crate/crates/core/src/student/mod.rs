//! Non-autoregressive synthesizer.
//!
//! Phonemes are encoded once, a small head predicts `ln(1 + d)` for every
//! phoneme from detached encodings, each encoding is repeated for its
//! duration with a positional encoding that restarts at every phoneme, and a
//! deep non-causal stack decodes all frames at once.

pub mod ssim;
pub mod train;

pub use ssim::{ssim, ssim_index};
pub use train::{student_losses, student_training_step, StudentBatch, StudentLosses, StudentStepStats};

use rand::Rng;

use crate::audio::{CorpusStats, MelSpectrogram, Normalization};
use crate::error::{Error, Result};
use crate::nn::layers::join;
use crate::nn::ops::{self, TimeMask};
use crate::nn::posenc::encoding_at;
use crate::nn::{no_grad, Conv1d, Embedding, Linear, Module, PlainStack, Tensor, TensorKind};

pub const DURATION_DILATIONS: [usize; 3] = [4, 3, 1];

#[derive(Clone, Debug, PartialEq)]
pub struct StudentConfig {
    pub vocab_size: usize,
    pub mel_bins: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
}

impl StudentConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            mel_bins: 80,
            channels: 128,
            kernel_size: 3,
            encoder_blocks: 26,
            decoder_blocks: 34,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "student vocab={} mel={} ch={} k={} enc={} dur={:?} dec={}",
            self.vocab_size,
            self.mel_bins,
            self.channels,
            self.kernel_size,
            self.encoder_blocks,
            DURATION_DILATIONS,
            self.decoder_blocks
        )
    }
}

/// First `blocks` entries of the repeated `pattern`; a partial last cycle keeps its leading entries.
pub fn cyclic_dilations(pattern: &[usize], blocks: usize) -> Vec<usize> {
    (0..blocks).map(|i| pattern[i % pattern.len()]).collect()
}

pub fn encoder_dilations(blocks: usize) -> Vec<usize> {
    cyclic_dilations(&[1, 1, 2, 2, 4, 4], blocks)
}

pub fn decoder_dilations(blocks: usize) -> Vec<usize> {
    cyclic_dilations(&[1, 1, 2, 2, 4, 4, 8, 8], blocks)
}

#[derive(Clone, Debug)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub embedding: Embedding,
    pub encoder: PlainStack,
    pub duration_stack: PlainStack,
    pub duration_conv: Conv1d,
    pub duration_out: Linear,
    pub decoder: PlainStack,
    pub projection: Conv1d,
}

impl StudentModel {
    pub fn new(config: StudentConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config.channels;
        if c == 0 || c % 2 != 0 {
            return Err(Error::Config(format!("student channels must be even and positive, got {c}")));
        }
        if config.kernel_size % 2 == 0 {
            return Err(Error::Config("student kernel size must be odd".into()));
        }
        let k = config.kernel_size;
        Ok(Self {
            embedding: Embedding::new(rng, config.vocab_size, c, 0.3),
            encoder: PlainStack::new(rng, c, k, &encoder_dilations(config.encoder_blocks)),
            duration_stack: PlainStack::new(rng, c, k, &DURATION_DILATIONS),
            duration_conv: Conv1d::new(rng, c, c, k, 1, false),
            duration_out: Linear::new(rng, c, 1),
            decoder: PlainStack::new(rng, c, k, &decoder_dilations(config.decoder_blocks)),
            projection: Conv1d::new(rng, c, config.mel_bins, 1, 1, false),
            config,
        })
    }

    /// `(B, channels, N)` phoneme encodings; `ids` is `B × N` row-major.
    pub fn encode(&self, ids: &[usize], lengths: &[usize], train: bool) -> Result<Tensor> {
        let n = padded_len(ids.len(), lengths)?;
        let mask = TimeMask::from_lengths(lengths, n);
        let x = ops::apply_mask(&self.embedding.forward(ids, lengths.len(), n)?, &mask);
        self.encoder.forward(&x, Some(&mask), train)
    }

    /// `(B, 1, N)` predicted `ln(1 + d)`, computed from a detached copy of the encodings.
    pub fn predict_durations(&self, encodings: &Tensor, lengths: &[usize], train: bool) -> Result<Tensor> {
        let mask = TimeMask::from_lengths(lengths, encodings.shape().time);
        let h = self.duration_stack.forward(&encodings.detach(), Some(&mask), train)?;
        let h = ops::relu(&self.duration_conv.forward(&h)?);
        Ok(ops::apply_mask(&self.duration_out.forward(&h)?, &mask))
    }

    /// `(B, mel_bins, T)` standardized frames from expanded encodings.
    pub fn decode(&self, expanded: &Tensor, frame_lengths: &[usize], train: bool) -> Result<Tensor> {
        let mask = TimeMask::from_lengths(frame_lengths, expanded.shape().time);
        let h = self.decoder.forward(expanded, Some(&mask), train)?;
        Ok(ops::apply_mask(&self.projection.forward(&h)?, &mask))
    }
}

impl Module for StudentModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.duration_stack.visit(&join(prefix, "duration_stack"), f);
        self.duration_conv.visit(&join(prefix, "duration_conv"), f);
        self.duration_out.visit(&join(prefix, "duration_out"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.projection.visit(&join(prefix, "projection"), f);
    }
}

fn padded_len(total: usize, lengths: &[usize]) -> Result<usize> {
    if lengths.is_empty() || total % lengths.len() != 0 {
        return Err(Error::Shape(format!("{total} ids do not split into {} rows", lengths.len())));
    }
    let n = total / lengths.len();
    if n == 0 || lengths.iter().any(|&l| l == 0 || l > n) {
        return Err(Error::InvalidArgument("every item needs between 1 and N phonemes".into()));
    }
    Ok(n)
}

/// Position of every expanded frame within its phoneme: `[2, 3]` gives `[0, 1, 0, 1, 2]`.
pub fn expansion_positions(durations: &[usize]) -> Vec<usize> {
    durations.iter().flat_map(|&d| 0..d).collect()
}

/// Repeats encoding `n` of item `b` `durations[b][n]` times and adds a
/// positional encoding restarting at zero on every phoneme. Returns the
/// `(B, C, T_max)` expansion and each item's frame count.
pub fn expand_encodings(encodings: &Tensor, durations: &[Vec<usize>]) -> Result<(Tensor, Vec<usize>)> {
    let s = encodings.shape();
    if durations.len() != s.batch {
        return Err(Error::Shape(format!("{} duration rows for a batch of {}", durations.len(), s.batch)));
    }
    if s.channels % 2 != 0 {
        return Err(Error::Shape("expansion needs an even channel count".into()));
    }
    let mut index = Vec::with_capacity(s.batch);
    let mut positions = Vec::with_capacity(s.batch);
    for d in durations {
        if d.len() > s.time {
            return Err(Error::Shape(format!("{} durations for {} phonemes", d.len(), s.time)));
        }
        if d.iter().all(|&v| v == 0) {
            return Err(Error::InvalidArgument("all durations are zero".into()));
        }
        index.push(
            d.iter()
                .enumerate()
                .flat_map(|(n, &k)| std::iter::repeat_n(Some(n), k))
                .collect::<Vec<_>>(),
        );
        positions.push(expansion_positions(d));
    }
    let lengths: Vec<usize> = positions.iter().map(Vec::len).collect();
    let t = lengths.iter().copied().max().unwrap_or(0);
    let c = s.channels;
    // positions restart per phoneme, so a table up to the longest duration covers every frame
    let longest = durations.iter().flatten().copied().max().unwrap_or(0);
    let mut table = vec![0.0f32; longest * c];
    for (p, col) in table.chunks_exact_mut(c).enumerate() {
        encoding_at(p as f64, c, col);
    }
    let mut pe = vec![0.0f32; s.batch * c * t];
    for (b, pos) in positions.iter().enumerate() {
        for ch in 0..c {
            let row = &mut pe[(b * c + ch) * t..][..pos.len()];
            for (dst, &p) in row.iter_mut().zip(pos) {
                *dst = table[p * c + ch];
            }
        }
    }
    let gathered = ops::gather_time(encodings, &index, t);
    Ok((ops::add_const(&gathered, &pe), lengths))
}

/// `round(e^p − 1)` clamped at zero. If every phoneme rounds to zero, the
/// phoneme with the largest prediction gets one frame.
pub fn round_durations(log_durations: &[f32]) -> Vec<usize> {
    let mut d: Vec<usize> = log_durations
        .iter()
        .map(|&p| ((p as f64).exp() - 1.0).round().max(0.0) as usize)
        .collect();
    if !d.is_empty() && d.iter().all(|&v| v == 0) {
        let mut best = 0;
        for (i, &p) in log_durations.iter().enumerate() {
            if p > log_durations[best] {
                best = i;
            }
        }
        d[best] = 1;
    }
    d
}

/// One synthesized utterance in standardized units, with its durations.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub durations: Vec<usize>,
}

/// Eval-mode synthesis of several utterances in one padded batch.
pub fn synthesize_batch(model: &StudentModel, items: &[&[usize]], stats: CorpusStats) -> Result<Vec<Synthesis>> {
    synthesize_batch_with(model, items, stats, |d| d)
}

/// As [`synthesize_batch`], with `adjust` applied to each rounded duration vector before expansion.
pub fn synthesize_batch_with(
    model: &StudentModel,
    items: &[&[usize]],
    stats: CorpusStats,
    adjust: impl Fn(Vec<usize>) -> Vec<usize>,
) -> Result<Vec<Synthesis>> {
    if items.is_empty() || items.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument("nothing to synthesize".into()));
    }
    let n = items.iter().map(|p| p.len()).max().unwrap_or(0);
    let mut ids = vec![crate::audio::PAD_ID; items.len() * n];
    for (b, p) in items.iter().enumerate() {
        ids[b * n..][..p.len()].copy_from_slice(p);
    }
    let lengths: Vec<usize> = items.iter().map(|p| p.len()).collect();
    no_grad(|| {
        let enc = model.encode(&ids, &lengths, false)?;
        let log_d = model.predict_durations(&enc, &lengths, false)?;
        let durations: Vec<Vec<usize>> = (0..items.len())
            .map(|b| adjust(round_durations(&(0..lengths[b]).map(|i| log_d.at(b, 0, i)).collect::<Vec<_>>())))
            .collect();
        let (expanded, frames) = expand_encodings(&enc, &durations)?;
        let out = model.decode(&expanded, &frames, false)?;
        let s = out.shape();
        let data = out.data();
        durations
            .into_iter()
            .zip(&frames)
            .enumerate()
            .map(|(b, (d, &t))| {
                let values = (0..s.channels).flat_map(|c| data[s.index(b, c, 0)..][..t].iter().copied()).collect();
                Ok(Synthesis {
                    mel: MelSpectrogram::new(s.channels, t, values, Normalization::Standardized(stats))?,
                    durations: d,
                })
            })
            .collect()
    })
}

/// Raw-log spectrogram of one utterance, ready for the vocoder.
pub fn synthesize(model: &StudentModel, ids: &[usize], stats: CorpusStats) -> Result<MelSpectrogram> {
    let out = synthesize_batch(model, &[ids], stats)?;
    Ok(out[0].mel.denormalize())
}

/// Input-to-output reach of the decoder, counted from a single frame: `(rf − 1) / 2` on each side.
pub fn decoder_half_width(model: &StudentModel) -> usize {
    (model.decoder.receptive_field() - 1) / 2
}
