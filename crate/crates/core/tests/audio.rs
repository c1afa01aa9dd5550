mod common;

use convtts::audio::griffin_lim::{griffin_lim_traced, mel_to_linear};
use convtts::audio::mel::magnitude_spectrogram;
use convtts::audio::wav::write_wav;
use convtts::audio::{
    griffin_lim, load_dataset, read_durations, wav_to_mel, write_durations, AudioConfig, CorpusStats,
    MelSpectrogram, NormTarget, Normalization, PhonemeVocabulary,
};
use convtts::Error;
use proptest::prelude::*;

fn sine(freq: f64, seconds: f64, sr: u32) -> Vec<f32> {
    let n = (seconds * sr as f64).round() as usize;
    (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()) as f32)
        .collect()
}

/// Frequency with the largest DFT magnitude, scanned at 1 Hz resolution.
fn dominant_frequency(x: &[f32], sr: u32, max_hz: usize) -> f64 {
    let mut best = (0.0, 0usize);
    for f in 1..=max_hz {
        let w = 2.0 * std::f64::consts::PI * f as f64 / sr as f64;
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (n, &v) in x.iter().enumerate() {
            re += v as f64 * (w * n as f64).cos();
            im -= v as f64 * (w * n as f64).sin();
        }
        let mag = re * re + im * im;
        if mag > best.0 {
            best = (mag, f);
        }
    }
    best.1 as f64
}

#[test]
fn frame_count_follows_centered_framing() {
    let config = AudioConfig::default();
    let samples = (9.72f64 * 22050.0).round() as usize;
    let mel = wav_to_mel(&vec![0.0; samples], &config).unwrap();
    assert_eq!(mel.frames, (9.72f64 * 22050.0 / 256.0).ceil() as usize);
    assert_eq!(mel.frames, 838);
    assert_eq!(mel.bins, 80);
}

#[test]
fn silence_clamps_to_log_floor() {
    let config = AudioConfig::default();
    let mel = wav_to_mel(&vec![0.0; 4000], &config).unwrap();
    let floor = 1e-5f32.ln();
    assert!(mel.values.iter().all(|&v| v == floor));
}

#[test]
fn sine_peaks_in_the_filter_covering_its_frequency() {
    let config = AudioConfig::default();
    let mel = wav_to_mel(&sine(440.0, 1.0, 22050), &config).unwrap();
    // Oracle: HTK triangle edges evaluated directly at 440 Hz.
    let mel_of = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz_of = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel_of(8000.0);
    let edges: Vec<f64> = (0..82).map(|i| hz_of(top * i as f64 / 81.0)).collect();
    let response = |m: usize| {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        ((440.0 - l) / (c - l)).min((r - 440.0) / (r - c)).max(0.0)
    };
    let want = (0..80).max_by(|&a, &b| response(a).total_cmp(&response(b))).unwrap();
    let t = mel.frames / 2;
    let got = (0..80).max_by(|&a, &b| mel.at(a, t).total_cmp(&mel.at(b, t))).unwrap();
    assert_eq!(got, want);
}

#[test]
fn extraction_is_deterministic() {
    let config = AudioConfig::default();
    let mut r = common::rng(1);
    let x = common::random_vec(&mut r, 6000, 0.3);
    let a = wav_to_mel(&x, &config).unwrap();
    let b = wav_to_mel(&x, &config).unwrap();
    let bits = |m: &MelSpectrogram| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

fn raw(values: Vec<f32>) -> MelSpectrogram {
    let n = values.len();
    MelSpectrogram::new(1, n, values, Normalization::RawLog).unwrap()
}

#[test]
fn unit_interval_endpoints() {
    let config = AudioConfig::default();
    let m = raw(vec![config.min_db, config.max_db, config.min_db - 3.0, config.max_db + 3.0]);
    let n = m.normalize(NormTarget::UnitInterval, &config, None).unwrap();
    assert_eq!(n.values, vec![0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn two_point_corpus_standardizes_to_unit() {
    let config = AudioConfig::default();
    let a = raw(vec![-2.0; 6]);
    let b = raw(vec![2.0; 6]);
    let stats = CorpusStats::compute([&a, &b]).unwrap();
    assert_eq!(stats, CorpusStats { mean: 0.0, std: 2.0 });
    let na = a.normalize(NormTarget::Standardized, &config, Some(&stats)).unwrap();
    let nb = b.normalize(NormTarget::Standardized, &config, Some(&stats)).unwrap();
    assert!(na.values.iter().all(|&v| v == -1.0));
    assert!(nb.values.iter().all(|&v| v == 1.0));
}

#[test]
fn zero_std_and_missing_stats_rejected() {
    let config = AudioConfig::default();
    let a = raw(vec![1.0; 4]);
    let stats = CorpusStats::compute([&a]).unwrap();
    assert!(matches!(
        a.normalize(NormTarget::Standardized, &config, Some(&stats)),
        Err(Error::InvalidArgument(_))
    ));
    assert!(a.normalize(NormTarget::Standardized, &config, None).is_err());
}

proptest! {
    #[test]
    fn normalization_round_trips(
        values in prop::collection::vec(-11.5f32..2.0, 1..64),
        mean in -8.0f32..0.0,
        std in 0.5f32..4.0,
    ) {
        let config = AudioConfig::default();
        let m = raw(values.clone());
        let stats = CorpusStats { mean, std };
        for (target, s) in [(NormTarget::UnitInterval, None), (NormTarget::Standardized, Some(&stats))] {
            let back = m.normalize(target, &config, s).unwrap().denormalize();
            prop_assert_eq!(back.normalization, Normalization::RawLog);
            for (a, b) in values.iter().zip(&back.values) {
                prop_assert!((a - b).abs() <= 1e-6, "{:?}: {} vs {}", target, a, b);
            }
        }
    }

    #[test]
    fn unit_interval_values_bounded(values in prop::collection::vec(-50.0f32..50.0, 1..64)) {
        let config = AudioConfig::default();
        let n = raw(values).normalize(NormTarget::UnitInterval, &config, None).unwrap();
        prop_assert!(n.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn griffin_lim_recovers_sine_frequency() {
    let config = AudioConfig::default();
    let mel = wav_to_mel(&sine(440.0, 1.0, 22050), &config).unwrap();
    let y = griffin_lim(&mel, &config, 60, 7).unwrap();
    assert_eq!(y.len(), 256 * (mel.frames - 1));
    assert!(y.iter().all(|v| v.abs() <= 1.0));
    let f = dominant_frequency(&y, 22050, 2000);
    let bin = 22050.0 / 1024.0;
    assert!((f - 440.0).abs() <= bin, "dominant frequency {f}");
}

#[test]
fn griffin_lim_error_never_increases() {
    let config = AudioConfig::default();
    let mut x = sine(440.0, 0.5, 22050);
    for (i, v) in sine(1250.0, 0.5, 22050).iter().enumerate() {
        x[i] += 0.5 * v;
    }
    let mel = wav_to_mel(&x, &config).unwrap();
    let target = mel_to_linear(&mel, &config).unwrap();
    let trace = griffin_lim_traced(&target, &config, 60, 3).unwrap();
    assert_eq!(trace.spectral_convergence.len(), 60);
    for w in trace.spectral_convergence.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} then {}", w[0], w[1]);
    }
    let one = griffin_lim_traced(&target, &config, 1, 3).unwrap();
    assert!(trace.spectral_convergence[59] <= one.spectral_convergence[0]);
}

#[test]
fn griffin_lim_reconstructs_consistent_magnitudes_closely() {
    // True STFT magnitudes are consistent, so the error should fall well below the first iterate.
    let config = AudioConfig::default();
    let x = sine(300.0, 0.5, 22050);
    let target = magnitude_spectrogram(&x, &config).unwrap();
    let trace = griffin_lim_traced(&target, &config, 40, 1).unwrap();
    assert!(trace.spectral_convergence[39] < 0.5 * trace.spectral_convergence[0]);
    assert!(griffin_lim_traced(&target, &config, 0, 1).is_err());
}

fn toy_corpus(dir: &std::path::Path, ids: &[&str], with_audio: &[bool]) {
    std::fs::create_dir_all(dir.join("wavs")).unwrap();
    let mut meta = String::new();
    for (id, &audio) in ids.iter().zip(with_audio) {
        meta.push_str(&format!("{id}|The dog.|the dog.\n"));
        if audio {
            write_wav(&dir.join("wavs").join(format!("{id}.wav")), &sine(220.0, 0.3, 22050), 22050).unwrap();
        }
    }
    std::fs::write(dir.join("metadata.csv"), meta).unwrap();
}

#[test]
fn dataset_split_preserves_order() {
    let dir = tempfile::tempdir().unwrap();
    toy_corpus(dir.path(), &["u1", "u2", "u3"], &[true; 3]);
    let vocab = PhonemeVocabulary::standard();
    let (train, eval) = load_dataset(dir.path(), 1, &AudioConfig::default(), &vocab).unwrap();
    assert_eq!(train.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), vec!["u1", "u2"]);
    assert_eq!(eval.len(), 1);
    assert_eq!(eval[0].id, "u3");
    assert_eq!(vocab.decode(&train[0].phoneme_ids), vec!["DH", "AH", "_", "D", "AO", "G", "."]);
    assert_eq!(train[0].mel.frames, 1 + train[0].waveform.len() / 256);
}

#[test]
fn phoneme_file_overrides_lexicon() {
    let dir = tempfile::tempdir().unwrap();
    toy_corpus(dir.path(), &["u1", "u2"], &[true; 2]);
    std::fs::write(dir.path().join("phonemes.csv"), "u2|B IY1 .\n").unwrap();
    let vocab = PhonemeVocabulary::standard();
    let (train, eval) = load_dataset(dir.path(), 1, &AudioConfig::default(), &vocab).unwrap();
    assert_eq!(vocab.decode(&eval[0].phoneme_ids), vec!["B", "IY", "."]);
    assert_eq!(train[0].phoneme_ids.len(), 7);
}

#[test]
fn missing_audio_names_the_utterance() {
    let dir = tempfile::tempdir().unwrap();
    toy_corpus(dir.path(), &["u1", "lost42"], &[true, false]);
    let err = load_dataset(dir.path(), 0, &AudioConfig::default(), &PhonemeVocabulary::standard()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("lost42"));
}

#[test]
fn malformed_metadata_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("wavs")).unwrap();
    std::fs::write(dir.path().join("metadata.csv"), "just-an-id\n").unwrap();
    let err = load_dataset(dir.path(), 0, &AudioConfig::default(), &PhonemeVocabulary::standard()).unwrap_err();
    assert!(err.to_string().contains(":1:"));
}

proptest! {
    #[test]
    fn durations_sidecar_round_trips(
        rows in prop::collection::vec(("[A-Za-z0-9_-]{1,10}", prop::collection::vec(0usize..500, 1..30)), 0..8)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("durations.txt");
        write_durations(&path, &rows).unwrap();
        prop_assert_eq!(read_durations(&path).unwrap(), rows);
    }
}
