//! LJSpeech-layout corpus loading and the durations sidecar file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::phonemes::PhonemeVocabulary;
use super::wav::read_wav;
use super::{wav_to_mel, AudioConfig, MelSpectrogram};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub phoneme_ids: Vec<usize>,
    pub waveform: Vec<f32>,
    /// Raw-log mel spectrogram of `waveform`.
    pub mel: MelSpectrogram,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `id|symbols` rows of an optional pre-phonemized file.
fn read_phoneme_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = read_text(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, syms) = line
            .split_once('|')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected `id|phonemes`", path.display(), i + 1)))?;
        map.insert(id.trim().to_string(), syms.to_string());
    }
    Ok(map)
}

/// Loads `metadata.csv` and `wavs/<id>.wav` under `root`, in metadata order.
///
/// Phonemes come from `phonemes.csv` when present, then from an optional
/// fourth metadata column, and otherwise from the lexicon applied to the
/// normalized transcript. The last `holdout` utterances form the second list.
pub fn load_dataset(
    root: &Path,
    holdout: usize,
    config: &AudioConfig,
    vocab: &PhonemeVocabulary,
) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let meta_path = root.join("metadata.csv");
    let meta = read_text(&meta_path)?;
    let phoneme_path = root.join("phonemes.csv");
    let pre = if phoneme_path.exists() {
        read_phoneme_file(&phoneme_path)?
    } else {
        HashMap::new()
    };

    let mut all = Vec::new();
    for (i, line) in meta.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        let id = fields[0].trim();
        if fields.len() < 2 || id.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: unparseable metadata line {line:?}",
                meta_path.display(),
                i + 1
            )));
        }
        let phoneme_ids = if let Some(p) = pre.get(id) {
            vocab.parse_symbols(p)
        } else if let Some(p) = fields.get(3).filter(|p| !p.trim().is_empty()) {
            vocab.parse_symbols(p)
        } else {
            let text = fields.get(2).filter(|t| !t.trim().is_empty()).unwrap_or(&fields[1]);
            vocab.encode_text(text)
        }
        .map_err(|e| Error::Data(format!("utterance {id}: {e}")))?;

        let wav_path = root.join("wavs").join(format!("{id}.wav"));
        if !wav_path.is_file() {
            return Err(Error::Data(format!("utterance {id}: missing audio file {}", wav_path.display())));
        }
        let waveform = read_wav(&wav_path, config.sample_rate)?;
        let mel = wav_to_mel(&waveform, config).map_err(|e| Error::Data(format!("utterance {id}: {e}")))?;
        all.push(Utterance {
            id: id.to_string(),
            phoneme_ids,
            waveform,
            mel,
        });
    }
    if holdout >= all.len() {
        return Err(Error::Data(format!(
            "holdout of {holdout} leaves no training data in a corpus of {}",
            all.len()
        )));
    }
    let eval = all.split_off(all.len() - holdout);
    Ok((all, eval))
}

/// Writes one `id|d1 d2 ... dN` line per utterance.
pub fn write_durations(path: &Path, entries: &[(String, Vec<usize>)]) -> Result<()> {
    let mut out = String::new();
    for (id, d) in entries {
        let body: Vec<String> = d.iter().map(usize::to_string).collect();
        writeln!(out, "{id}|{}", body.join(" ")).expect("writing to a String cannot fail");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a durations sidecar, preserving file order.
pub fn read_durations(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::Data(format!("{}:{}: {what}", path.display(), i + 1));
            let (id, body) = line.split_once('|').ok_or_else(|| bad("expected `id|durations`"))?;
            let d = body
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|_| bad(&format!("invalid duration {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_string(), d))
        })
        .collect()
}
