//! Synthetic corpus for smoke tests.
//!
//! Each "phoneme" is a steady tone complex with its own three partials, so
//! the spectrogram of an utterance is a sequence of distinct, learnable
//! blocks. None of this resembles speech.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::wav::write_wav;
use crate::error::{Error, Result};

/// Symbols used by the toy corpus, all present in the standard vocabulary.
pub const TOY_SYMBOLS: [&str; 12] = ["AA", "IY", "UW", "EH", "M", "N", "S", "SH", "L", "R", "K", "T"];
pub const TOY_UTTERANCES: usize = 12;
pub const TOY_HOLDOUT: usize = 2;
pub const TOY_SAMPLE_RATE: u32 = 22050;

/// Partials `(frequency Hz, amplitude)` of toy symbol `i`.
fn partials(i: usize) -> [(f64, f64); 3] {
    let f = i as f64;
    [
        (180.0 + 55.0 * f, 0.5),
        (700.0 + 160.0 * ((i * 5) % 12) as f64, 0.3),
        (2200.0 + 330.0 * ((i * 7) % 12) as f64, 0.2),
    ]
}

/// One utterance: the symbol indices and the length in samples of each.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyUtterance {
    pub id: String,
    pub symbols: Vec<usize>,
    pub samples: Vec<usize>,
}

impl ToyUtterance {
    pub fn phoneme_string(&self) -> String {
        self.symbols.iter().map(|&s| TOY_SYMBOLS[s]).collect::<Vec<_>>().join(" ")
    }

    pub fn render(&self, sample_rate: u32) -> Vec<f32> {
        let fade = (0.005 * sample_rate as f64) as usize;
        let mut out = Vec::with_capacity(self.samples.iter().sum());
        for (&sym, &len) in self.symbols.iter().zip(&self.samples) {
            let p = partials(sym);
            for n in 0..len {
                let t = n as f64 / sample_rate as f64;
                let env = if n < fade {
                    0.5 - 0.5 * (PI * n as f64 / fade as f64).cos()
                } else if len - n <= fade {
                    0.5 - 0.5 * (PI * (len - n) as f64 / fade as f64).cos()
                } else {
                    1.0
                };
                let v: f64 = p.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum();
                out.push((0.6 * env * v) as f32);
            }
        }
        out
    }
}

/// Plans `count` utterances of 6 to 11 symbols, 45 to 110 ms each.
pub fn plan(count: usize, seed: u64, sample_rate: u32) -> Vec<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|u| {
            let n = rng.random_range(6..=11);
            let mut symbols: Vec<usize> = Vec::with_capacity(n);
            while symbols.len() < n {
                let s = rng.random_range(0..TOY_SYMBOLS.len());
                if symbols.last() != Some(&s) {
                    symbols.push(s);
                }
            }
            let samples = symbols
                .iter()
                .map(|_| (rng.random_range(0.045..0.110) * sample_rate as f64) as usize)
                .collect();
            ToyUtterance {
                id: format!("toy_{u:03}"),
                symbols,
                samples,
            }
        })
        .collect()
}

/// Configuration written next to the toy corpus.
pub fn toy_config_text(root: &Path) -> String {
    format!(
        "[data]\nroot = {root:?}\nholdout = {TOY_HOLDOUT}\n\n\
         [teacher]\nepochs = 300\n\n\
         [student]\nepochs = 2000\nplateau_patience = 25\n\n\
         [optim]\ncheckpoint_every = 100\n",
        root = root.display().to_string()
    )
}

/// Writes `metadata.csv`, `wavs/` and `toy.toml` under `dir`; returns the config path.
pub fn make_toy(dir: &Path, seed: u64) -> Result<PathBuf> {
    let wavs = dir.join("wavs");
    std::fs::create_dir_all(&wavs).map_err(|e| Error::io(&wavs, e))?;
    let root = std::fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = String::new();
    for utt in plan(TOY_UTTERANCES, seed, TOY_SAMPLE_RATE) {
        write_wav(&wavs.join(format!("{}.wav", utt.id)), &utt.render(TOY_SAMPLE_RATE), TOY_SAMPLE_RATE)?;
        let text = format!("synthetic tone sequence {}", &utt.id[4..]);
        writeln!(meta, "{}|{text}|{text}|{}", utt.id, utt.phoneme_string()).expect("string write");
    }
    let meta_path = dir.join("metadata.csv");
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    let cfg_path = dir.join("toy.toml");
    std::fs::write(&cfg_path, toy_config_text(&root)).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(cfg_path)
}
