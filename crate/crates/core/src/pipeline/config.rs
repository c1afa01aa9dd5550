//! Pipeline configuration: `[section]` headers with `key = value` lines.
//!
//! Every key has a default, so an empty file describes the full-size
//! architecture and training recipe. Unknown sections or keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{Error, Result};
use crate::nn::checkpoint::fnv1a64;
use crate::student::StudentConfig;
use crate::teacher::{AugmentParams, LocationWindow, TeacherConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub audio: AudioSection,
    pub teacher: TeacherSection,
    pub student: StudentSection,
    pub optim: OptimSection,
    pub synthesis: SynthesisSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Corpus directory holding `metadata.csv` and `wavs/`.
    pub root: PathBuf,
    /// Trailing utterances kept out of training for evaluation.
    pub holdout: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/LJSpeech-1.1"),
            holdout: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioSection {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for AudioSection {
    fn default() -> Self {
        let a = AudioConfig::default();
        Self {
            sample_rate: a.sample_rate,
            n_fft: a.n_fft,
            win_length: a.win_length,
            hop_length: a.hop_length,
            n_mels: a.n_mels,
            f_min: a.f_min,
            f_max: a.f_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub kernel_size: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub post_channels: usize,
    pub guided_width: f64,
    pub noise_std: f32,
    /// Feedback passes are drawn uniformly from `0..=max_feedback_passes` per step.
    pub max_feedback_passes: usize,
    pub replace_prob: f64,
    pub location_back: usize,
    pub location_forward: usize,
    pub epochs: usize,
}

impl Default for TeacherSection {
    fn default() -> Self {
        let t = TeacherConfig::new(0);
        let w = LocationWindow::default();
        Self {
            embedding_dim: t.embedding_dim,
            attention_dim: t.attention_dim,
            residual_channels: t.residual_channels,
            gate_channels: t.gate_channels,
            kernel_size: t.kernel_size,
            encoder_blocks: t.encoder_blocks,
            decoder_blocks: t.decoder_blocks,
            post_channels: t.post_channels,
            guided_width: 0.2,
            noise_std: 0.02,
            max_feedback_passes: 3,
            replace_prob: 0.05,
            location_back: w.back,
            location_forward: w.forward,
            epochs: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub channels: usize,
    pub kernel_size: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub epochs: usize,
    pub plateau_factor: f32,
    pub plateau_patience: u32,
}

impl Default for StudentSection {
    fn default() -> Self {
        let s = StudentConfig::new(0);
        Self {
            channels: s.channels,
            kernel_size: s.kernel_size,
            encoder_blocks: s.encoder_blocks,
            decoder_blocks: s.decoder_blocks,
            epochs: 100,
            plateau_factor: 0.5,
            plateau_patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub learning_rate: f32,
    pub warmup_epochs: usize,
    pub clip: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            warmup_epochs: 30,
            clip: 1.0,
            batch_size: 64,
            seed: 1,
            checkpoint_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub griffin_lim_iterations: usize,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            griffin_lim_iterations: 60,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Complete text form, every key written out.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.audio_config()?;
        let o = &self.optim;
        if o.batch_size == 0 {
            return bad("optim.batch_size must be at least 1");
        }
        if !(o.learning_rate > 0.0) || !(o.clip > 0.0) {
            return bad("optim.learning_rate and optim.clip must be positive");
        }
        let t = &self.teacher;
        if !(t.guided_width > 0.0) {
            return bad("teacher.guided_width must be positive");
        }
        if !(t.noise_std >= 0.0) || !(0.0..=1.0).contains(&t.replace_prob) {
            return bad("teacher.noise_std must be >= 0 and teacher.replace_prob in [0, 1]");
        }
        if t.embedding_dim != t.attention_dim {
            return bad("teacher.embedding_dim must equal teacher.attention_dim");
        }
        if t.gate_channels % 2 != 0 || t.kernel_size == 0 {
            return bad("teacher.gate_channels must be even and teacher.kernel_size positive");
        }
        let s = &self.student;
        if s.channels == 0 || s.channels % 2 != 0 || s.kernel_size % 2 == 0 {
            return bad("student.channels must be even and student.kernel_size odd");
        }
        if !(s.plateau_factor > 0.0 && s.plateau_factor <= 1.0) || s.plateau_patience == 0 {
            return bad("student.plateau_factor must be in (0, 1] and student.plateau_patience positive");
        }
        if self.synthesis.griffin_lim_iterations == 0 {
            return bad("synthesis.griffin_lim_iterations must be positive");
        }
        Ok(())
    }

    pub fn audio_config(&self) -> Result<AudioConfig> {
        let a = &self.audio;
        let cfg = AudioConfig {
            sample_rate: a.sample_rate,
            n_fft: a.n_fft,
            win_length: a.win_length,
            hop_length: a.hop_length,
            n_mels: a.n_mels,
            f_min: a.f_min,
            f_max: a.f_max,
            ..AudioConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn teacher_config(&self, vocab_size: usize) -> TeacherConfig {
        let t = &self.teacher;
        TeacherConfig {
            vocab_size,
            mel_bins: self.audio.n_mels,
            embedding_dim: t.embedding_dim,
            attention_dim: t.attention_dim,
            residual_channels: t.residual_channels,
            gate_channels: t.gate_channels,
            kernel_size: t.kernel_size,
            encoder_blocks: t.encoder_blocks,
            decoder_blocks: t.decoder_blocks,
            post_channels: t.post_channels,
        }
    }

    pub fn student_config(&self, vocab_size: usize) -> StudentConfig {
        let s = &self.student;
        StudentConfig {
            vocab_size,
            mel_bins: self.audio.n_mels,
            channels: s.channels,
            kernel_size: s.kernel_size,
            encoder_blocks: s.encoder_blocks,
            decoder_blocks: s.decoder_blocks,
        }
    }

    pub fn location_window(&self) -> LocationWindow {
        LocationWindow {
            back: self.teacher.location_back,
            forward: self.teacher.location_forward,
        }
    }

    /// Augmentation with a given number of feedback passes.
    pub fn augment_params(&self, feedback_passes: usize) -> AugmentParams {
        AugmentParams {
            noise_std: self.teacher.noise_std,
            feedback_passes,
            replace_prob: self.teacher.replace_prob,
        }
    }
}

pub fn teacher_hash(cfg: &TeacherConfig) -> u64 {
    fnv1a64(cfg.describe().as_bytes())
}

pub fn student_hash(cfg: &StudentConfig) -> u64 {
    fnv1a64(cfg.describe().as_bytes())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.optim.batch_size, 64);
        assert_eq!(cfg.optim.learning_rate, 0.002);
        assert_eq!(cfg.optim.warmup_epochs, 30);
        assert_eq!(cfg.optim.clip, 1.0);
        assert_eq!(cfg.student.encoder_blocks, 26);
        assert_eq!(cfg.student.decoder_blocks, 34);
        assert_eq!(cfg.teacher.guided_width, 0.2);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = PipelineConfig::parse("[optim]\nbatch_size = 8\n\n[data]\nroot = \"toy\"\nholdout = 2\n").unwrap();
        assert_eq!(cfg.optim.batch_size, 8);
        assert_eq!(cfg.data.root, PathBuf::from("toy"));
        assert!(matches!(PipelineConfig::parse("[optim]\nbatchsize = 8\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("[nonsense]\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("[optim]\nbatch_size = 0\n"), Err(Error::Config(_))));
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.student.encoder_blocks = 20;
        cfg.teacher.noise_std = 0.013;
        let back = PipelineConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(student_hash(&back.student_config(90)), student_hash(&cfg.student_config(90)));
        assert_ne!(
            student_hash(&back.student_config(90)),
            student_hash(&PipelineConfig::default().student_config(90))
        );
    }
}
