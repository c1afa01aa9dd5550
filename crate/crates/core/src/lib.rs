//! Convolutional teacher-student spectrogram synthesis.
//!
//! * [`nn`]: tensors, autograd, dilated convolutions, residual blocks, Adam.
//! * [`audio`]: dataset loading, phonemes, mel extraction, Griffin-Lim.
//! * [`teacher`]: autoregressive aligner that yields phoneme durations.
//! * [`student`]: parallel synthesizer driven by those durations.
//! * [`pipeline`]: configuration, commands and the inference benchmark.

pub mod audio;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
