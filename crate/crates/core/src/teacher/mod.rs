//! Autoregressive convolutional aligner.
//!
//! The teacher predicts the next spectrogram frame from the phonemes and the
//! frames before it, through one dot-product attention between a phoneme
//! encoder and a causal spectrogram encoder. Its attention matrix is the
//! product that matters: per-frame argmax positions become phoneme durations
//! for the student.

pub mod attention;
pub mod generate;
pub mod train;

pub use attention::{
    diagonality, durations_from_argmax, extract_durations, guided_attention_loss, guided_attention_term,
    guided_penalty, masked_argmax, Alignment, AttentionMatrix, LocationWindow,
};
pub use generate::{sequential_generate, sequential_teacher_forced, Generation};
pub use train::{augment, teacher_losses, teacher_training_step, AugmentParams, TeacherBatch, TeacherStepStats};

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::join;
use crate::nn::ops::{self, TimeMask};
use crate::nn::posenc::encoding_at;
use crate::nn::{Embedding, GatedStack, Linear, Module, Shape, Tensor, TensorKind};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherConfig {
    pub vocab_size: usize,
    pub mel_bins: usize,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub kernel_size: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub post_channels: usize,
}

impl TeacherConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            mel_bins: 80,
            embedding_dim: 128,
            attention_dim: 128,
            residual_channels: 40,
            gate_channels: 80,
            kernel_size: 3,
            encoder_blocks: 10,
            decoder_blocks: 14,
            post_channels: 80,
        }
    }

    /// Canonical text used for the architecture hash.
    pub fn describe(&self) -> String {
        format!(
            "teacher vocab={} mel={} emb={} att={} res={} gate={} k={} enc={} dec={} post={}",
            self.vocab_size,
            self.mel_bins,
            self.embedding_dim,
            self.attention_dim,
            self.residual_channels,
            self.gate_channels,
            self.kernel_size,
            self.encoder_blocks,
            self.decoder_blocks,
            self.post_channels
        )
    }
}

/// `1, 3, 9, 27, 1, 3, 9, 27` followed by ones.
pub fn teacher_dilations(blocks: usize) -> Vec<usize> {
    (0..blocks).map(|i| if i < 8 { [1, 3, 9, 27][i % 4] } else { 1 }).collect()
}

#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub embedding: Embedding,
    pub phoneme_in: Linear,
    pub phoneme_encoder: GatedStack,
    pub frame_in: Linear,
    pub spectrogram_encoder: GatedStack,
    /// Shared by keys and queries.
    pub key_query: Linear,
    pub value: Linear,
    pub context_out: Linear,
    pub decoder: GatedStack,
    pub post: [Linear; 2],
    pub prediction: Linear,
}

/// Everything a forward pass produces.
pub struct TeacherOutput {
    /// `(B, mel_bins, T)` in (0, 1).
    pub prediction: Tensor,
    /// `(B, N, T)`; columns are distributions over valid phonemes.
    pub attention: Tensor,
    /// Scaled logits before the softmax, `(B, N, T)`.
    pub logits: Tensor,
    /// Attention context in attention space, `(B, attention_dim, T)`.
    pub context: Tensor,
}

/// Phoneme-side tensors, independent of the frames.
pub struct PhonemeMemory {
    /// `(B, attention_dim, N)` after positional encoding and the shared projection.
    pub keys: Tensor,
    /// `(B, attention_dim, N)`
    pub values: Tensor,
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl TeacherModel {
    pub fn new(config: TeacherConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = &config;
        if c.vocab_size == 0 || c.residual_channels % 2 != 0 {
            return Err(Error::Config("teacher needs a vocabulary and an even residual width".into()));
        }
        if c.embedding_dim != c.attention_dim {
            // Embeddings are summed with projected encoder outputs to form the values.
            return Err(Error::Config("teacher embedding and attention dimensions must match".into()));
        }
        let enc = teacher_dilations(c.encoder_blocks);
        let dec = teacher_dilations(c.decoder_blocks);
        let (r, g, k) = (c.residual_channels, c.gate_channels, c.kernel_size);
        Ok(Self {
            embedding: Embedding::new(rng, c.vocab_size, c.embedding_dim, 0.1),
            phoneme_in: Linear::new(rng, c.embedding_dim, r),
            phoneme_encoder: GatedStack::new(rng, r, g, k, &enc, false)?,
            frame_in: Linear::new(rng, c.mel_bins, r),
            spectrogram_encoder: GatedStack::new(rng, r, g, k, &enc, true)?,
            key_query: Linear::new(rng, r, c.attention_dim),
            value: Linear::new(rng, r, c.attention_dim),
            context_out: Linear::new(rng, c.attention_dim, r),
            decoder: GatedStack::new(rng, r, g, k, &dec, true)?,
            post: [Linear::new(rng, r, c.post_channels), Linear::new(rng, c.post_channels, c.post_channels)],
            prediction: Linear::new(rng, c.post_channels, c.mel_bins),
            config,
        })
    }

    /// Encodes a padded phoneme batch (`ids` is `B x N` row-major).
    pub fn encode_phonemes(&self, ids: &[usize], lengths: &[usize]) -> Result<PhonemeMemory> {
        let batch = lengths.len();
        if batch == 0 || ids.len() % batch != 0 {
            return Err(Error::Shape("phoneme ids do not form a batch".into()));
        }
        let n = ids.len() / batch;
        if n == 0 || lengths.iter().any(|&l| l == 0 || l > n) {
            return Err(Error::InvalidArgument("every utterance needs at least one phoneme".into()));
        }
        let mask = TimeMask::from_lengths(lengths, n);
        let emb = self.embedding.forward(ids, batch, n)?;
        let h = ops::apply_mask(&ops::relu(&self.phoneme_in.forward(&emb)?), &mask);
        let enc = self.phoneme_encoder.forward(&h, Some(&mask))?;
        let r = self.config.residual_channels;
        let pe: Vec<f64> = (0..n).map(|p| p as f64).collect();
        let keys = self.key_query.forward(&ops::add_const(&enc, &tile_encoding(&pe, r, batch)))?;
        let values = ops::scale(
            &ops::add(&self.value.forward(&enc)?, &emb),
            std::f32::consts::FRAC_1_SQRT_2,
        );
        Ok(PhonemeMemory {
            keys,
            values,
            lengths: lengths.to_vec(),
            max_len: n,
        })
    }

    /// Spectrogram encoder over `(B, mel_bins, L)` input frames.
    pub fn encode_frames(&self, frames: &Tensor, mask: Option<&TimeMask>) -> Result<Tensor> {
        let h = ops::relu(&self.frame_in.forward(frames)?);
        self.spectrogram_encoder.forward(&h, mask)
    }

    /// Query vectors for encoded frames whose first column is absolute frame `offset`.
    pub fn queries(&self, encoded: &Tensor, offset: usize, rates: &[f32]) -> Result<Tensor> {
        let s = encoded.shape();
        if rates.len() != s.batch {
            return Err(Error::Shape("one positional rate per batch item is required".into()));
        }
        let mut pe = Vec::with_capacity(s.numel());
        for &rate in rates {
            let pos: Vec<f64> = (0..s.time).map(|t| (offset + t) as f64 * rate as f64).collect();
            pe.extend(tile_encoding(&pos, s.channels, 1));
        }
        self.key_query.forward(&ops::add_const(encoded, &pe))
    }

    /// Scaled attention logits `KᵀQ / √d`, `(B, N, L)`.
    pub fn attention_logits(&self, memory: &PhonemeMemory, queries: &Tensor) -> Result<Tensor> {
        let logits = ops::matmul(&memory.keys, true, queries, false)?;
        Ok(ops::scale(&logits, 1.0 / (self.config.attention_dim as f32).sqrt()))
    }

    /// Decoder from context `(B, attention_dim, L)` and encoded frames to predictions.
    pub fn decode(&self, context: &Tensor, encoded: &Tensor, mask: Option<&TimeMask>) -> Result<Tensor> {
        let x = ops::add(&self.context_out.forward(context)?, encoded);
        let mut h = self.decoder.forward(&x, mask)?;
        for layer in &self.post {
            h = ops::relu(&layer.forward(&h)?);
        }
        Ok(ops::sigmoid(&self.prediction.forward(&h)?))
    }

    /// Parallel teacher-forced pass.
    ///
    /// `input` holds the shifted frames `(B, mel_bins, T)`; `rates` are the
    /// per-item query position rates (phonemes per frame).
    pub fn forward(
        &self,
        ids: &[usize],
        phoneme_lengths: &[usize],
        input: &Tensor,
        frame_lengths: &[usize],
        rates: &[f32],
    ) -> Result<TeacherOutput> {
        let s = input.shape();
        if s.channels != self.config.mel_bins {
            return Err(Error::Shape(format!("expected {} mel bins, got {}", self.config.mel_bins, s.channels)));
        }
        if s.time == 0 || frame_lengths.iter().any(|&l| l == 0 || l > s.time) {
            return Err(Error::InvalidArgument("every utterance needs at least one frame".into()));
        }
        if frame_lengths.len() != s.batch || phoneme_lengths.len() != s.batch {
            return Err(Error::Shape("batch size mismatch between phonemes and frames".into()));
        }
        let memory = self.encode_phonemes(ids, phoneme_lengths)?;
        let fmask = TimeMask::from_lengths(frame_lengths, s.time);
        let encoded = self.encode_frames(input, Some(&fmask))?;
        let queries = self.queries(&encoded, 0, rates)?;
        let logits = self.attention_logits(&memory, &queries)?;
        let allowed = phoneme_allowed(&memory.lengths, memory.max_len, s.time);
        let attention = ops::softmax_channels(&logits, Some(Rc::new(allowed)));
        let context = ops::matmul(&memory.values, false, &attention, false)?;
        let prediction = self.decode(&context, &encoded, Some(&fmask))?;
        Ok(TeacherOutput {
            prediction,
            attention,
            logits,
            context,
        })
    }
}

/// `(B, N, T)` validity of attention cells: padded phonemes are excluded.
pub fn phoneme_allowed(lengths: &[usize], n: usize, t: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(lengths.len() * n * t);
    for &len in lengths {
        for p in 0..n {
            out.extend(std::iter::repeat_n(p < len, t));
        }
    }
    out
}

/// Channel-major positional encodings for `positions`, repeated `batch` times.
fn tile_encoding(positions: &[f64], dim: usize, batch: usize) -> Vec<f32> {
    let len = positions.len();
    let mut one = vec![0.0f32; dim * len];
    let mut col = vec![0.0f32; dim];
    for (t, &p) in positions.iter().enumerate() {
        encoding_at(p, dim, &mut col);
        for c in 0..dim {
            one[c * len + t] = col[c];
        }
    }
    one.repeat(batch)
}

/// Unit-interval frames shifted one step later with a zero first frame.
pub fn shift_frames(target: &[f32], shape: Shape) -> Vec<f32> {
    let mut out = vec![0.0f32; target.len()];
    for row in 0..shape.batch * shape.channels {
        let src = &target[row * shape.time..(row + 1) * shape.time];
        out[row * shape.time + 1..(row + 1) * shape.time].copy_from_slice(&src[..shape.time - 1]);
    }
    out
}

impl Module for TeacherModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorKind)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.phoneme_in.visit(&join(prefix, "phoneme_in"), f);
        self.phoneme_encoder.visit(&join(prefix, "phoneme_encoder"), f);
        self.frame_in.visit(&join(prefix, "frame_in"), f);
        self.spectrogram_encoder.visit(&join(prefix, "spectrogram_encoder"), f);
        self.key_query.visit(&join(prefix, "key_query"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.context_out.visit(&join(prefix, "context_out"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        for (i, l) in self.post.iter().enumerate() {
            l.visit(&join(prefix, &format!("post.{i}")), f);
        }
        self.prediction.visit(&join(prefix, "prediction"), f);
    }
}
