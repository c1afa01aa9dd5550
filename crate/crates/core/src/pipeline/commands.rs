use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{student_hash, teacher_hash, PipelineConfig};
use super::metrics::MetricsLog;
use super::store::{save, Loaded, ModelKind, SaveRequest, TrainState};
use crate::audio::wav::write_wav;
use crate::audio::{
    griffin_lim, load_dataset, read_durations, write_durations, AudioConfig, CorpusStats, MelSpectrogram, NormTarget,
    PhonemeVocabulary, Utterance,
};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, NamedTensor};
use crate::nn::{no_grad, ops, LrSchedule, Tensor};
use crate::student::{self, student_losses, student_training_step, StudentBatch, StudentModel, Synthesis};
use crate::teacher::{
    augment, diagonality, extract_durations, guided_attention_term, shift_frames, teacher_training_step,
    AttentionMatrix, TeacherBatch, TeacherModel,
};

/// `path` with `suffix` appended to its file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Random stream for one epoch, independent of how training was split into runs.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn load_corpus(cfg: &PipelineConfig) -> Result<(AudioConfig, Vec<Utterance>, Vec<Utterance>)> {
    let audio = cfg.audio_config()?;
    let vocab = PhonemeVocabulary::standard();
    let (train, eval) = load_dataset(&cfg.data.root, cfg.data.holdout, &audio, &vocab)?;
    Ok((audio, train, eval))
}

fn unit_mels(utts: &[Utterance], audio: &AudioConfig) -> Result<Vec<MelSpectrogram>> {
    utts.iter().map(|u| u.mel.normalize(NormTarget::UnitInterval, audio, None)).collect()
}

pub struct TrainOptions {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub log: bool,
}

impl TrainOptions {
    pub fn step_log(&self) -> PathBuf {
        with_suffix(&self.out, ".metrics.csv")
    }

    pub fn epoch_log(&self) -> PathBuf {
        with_suffix(&self.out, ".epochs.csv")
    }
}

#[derive(Clone, Debug)]
pub struct TeacherReport {
    pub steps: u64,
    pub epochs: usize,
    /// Mean diagonality of teacher-forced attention over the training set.
    pub train_diagonality: f64,
    pub eval_diagonality: Option<f64>,
}

struct TeacherEval {
    mae: f64,
    guided: f64,
    diagonality: f64,
}

fn evaluate_teacher(
    model: &TeacherModel,
    utts: &[Utterance],
    mels: &[MelSpectrogram],
    batch_size: usize,
    g: f64,
) -> Result<TeacherEval> {
    let (mut mae, mut guided, mut diag) = (0.0, 0.0, 0.0);
    for (us, ms) in utts.chunks(batch_size).zip(mels.chunks(batch_size)) {
        let items: Vec<(&[usize], &MelSpectrogram)> = us.iter().map(|u| u.phoneme_ids.as_slice()).zip(ms).collect();
        let batch = TeacherBatch::new(&items)?;
        let shape = batch.shape();
        let input = Tensor::new(shape, shift_frames(&batch.target, shape));
        let (m, gl, out) = no_grad(|| -> Result<_> {
            let out = model.forward(&batch.ids, &batch.phoneme_lengths, &input, &batch.frame_lengths, &batch.rates())?;
            let m = ops::l1_loss(&out.prediction, &batch.target, &batch.mae_weights()).item() as f64;
            let gl = guided_attention_term(&out.attention, &batch.phoneme_lengths, &batch.frame_lengths, g)?.item() as f64;
            Ok((m, gl, out))
        })?;
        let w = us.len() as f64 / utts.len() as f64;
        mae += m * w;
        guided += gl * w;
        for (b, (&n, &t)) in batch.phoneme_lengths.iter().zip(&batch.frame_lengths).enumerate() {
            let a = AttentionMatrix::from_batch(&out.attention, b, n, t)?;
            diag += diagonality(&a.argmax(), n) / utts.len() as f64;
        }
    }
    Ok(TeacherEval {
        mae,
        guided,
        diagonality: diag,
    })
}

pub fn train_teacher(opts: &TrainOptions) -> Result<TeacherReport> {
    let cfg = &opts.config;
    let (audio, train, eval) = load_corpus(cfg)?;
    let train_mels = unit_mels(&train, &audio)?;
    let eval_mels = unit_mels(&eval, &audio)?;
    let vocab = PhonemeVocabulary::standard();
    let tcfg = cfg.teacher_config(vocab.len());
    let hash = teacher_hash(&tcfg);
    let model = TeacherModel::new(tcfg, &mut ChaCha8Rng::seed_from_u64(cfg.optim.seed))?;
    let mut state = match &opts.resume {
        Some(path) => {
            let loaded = Loaded::open(path, ModelKind::Teacher)?;
            loaded.load_model(hash, &model)?;
            loaded.train_state(cfg.optim.clip, None)?
        }
        None => TrainState::new(cfg.optim.clip),
    };

    let bs = cfg.optim.batch_size.min(train.len());
    let steps_per_epoch = train.len().div_ceil(bs);
    let schedule = LrSchedule::noam(cfg.optim.learning_rate, (cfg.optim.warmup_epochs * steps_per_epoch) as u64);
    let g = cfg.teacher.guided_width;
    let append = opts.resume.is_some();
    let mut steps = MetricsLog::open(&opts.step_log(), &["step", "epoch", "lr", "mae", "guided", "grad_norm"], append)?;
    let mut epochs = MetricsLog::open(
        &opts.epoch_log(),
        &["epoch", "step", "train_mae", "train_guided", "eval_mae", "eval_guided", "eval_diagonality"],
        append,
    )?;
    let checkpoint = |state: &TrainState, path: &Path| {
        save(
            path,
            &SaveRequest {
                kind: ModelKind::Teacher,
                arch_hash: hash,
                model: &model,
                config: cfg,
                state,
                stats: None,
            },
        )
    };

    while state.epoch < cfg.teacher.epochs {
        let mut rng = epoch_rng(cfg.optim.seed, state.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum_mae, mut sum_guided) = (0.0, 0.0);
        for chunk in order.chunks(bs) {
            let items: Vec<(&[usize], &MelSpectrogram)> =
                chunk.iter().map(|&i| (train[i].phoneme_ids.as_slice(), &train_mels[i])).collect();
            let batch = TeacherBatch::new(&items)?;
            state.step += 1;
            let lr = schedule.learning_rate(state.step)?;
            let passes = rng.random_range(0..=cfg.teacher.max_feedback_passes);
            let frames = augment(&model, &batch, &cfg.augment_params(passes), &mut rng)?;
            let s = teacher_training_step(&model, &batch, &frames, &mut state.adam, lr, g)?;
            sum_mae += s.mae as f64;
            sum_guided += s.guided as f64;
            steps.row(&[
                state.step.to_string(),
                (state.epoch + 1).to_string(),
                format!("{lr:.8}"),
                fmt(s.mae as f64),
                fmt(s.guided as f64),
                fmt(s.grad_norm as f64),
            ])?;
        }
        state.epoch += 1;
        let ev = if eval.is_empty() {
            None
        } else {
            Some(evaluate_teacher(&model, &eval, &eval_mels, bs, g)?)
        };
        let n = steps_per_epoch as f64;
        epochs.row(&[
            state.epoch.to_string(),
            state.step.to_string(),
            fmt(sum_mae / n),
            fmt(sum_guided / n),
            fmt(ev.as_ref().map_or(f64::NAN, |e| e.mae)),
            fmt(ev.as_ref().map_or(f64::NAN, |e| e.guided)),
            fmt(ev.as_ref().map_or(f64::NAN, |e| e.diagonality)),
        ])?;
        if opts.log {
            eprintln!(
                "teacher epoch {} step {}: mae {:.4} guided {:.4}",
                state.epoch,
                state.step,
                sum_mae / n,
                sum_guided / n
            );
        }
        let every = cfg.optim.checkpoint_every;
        if every > 0 && state.epoch % every == 0 && state.epoch < cfg.teacher.epochs {
            steps.flush()?;
            epochs.flush()?;
            checkpoint(&state, &opts.out)?;
        }
    }
    steps.flush()?;
    epochs.flush()?;
    checkpoint(&state, &opts.out)?;

    let train_eval = evaluate_teacher(&model, &train, &train_mels, bs, g)?;
    let eval_diagonality = if eval.is_empty() {
        None
    } else {
        Some(evaluate_teacher(&model, &eval, &eval_mels, bs, g)?.diagonality)
    };
    Ok(TeacherReport {
        steps: state.step,
        epochs: state.epoch,
        train_diagonality: train_eval.diagonality,
        eval_diagonality,
    })
}

/// Rebuilds the teacher described by `cfg` from a checkpoint.
pub fn load_teacher(cfg: &PipelineConfig, path: &Path) -> Result<TeacherModel> {
    let tcfg = cfg.teacher_config(PhonemeVocabulary::standard().len());
    let hash = teacher_hash(&tcfg);
    let model = TeacherModel::new(tcfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    Loaded::open(path, ModelKind::Teacher)?.load_model(hash, &model)?;
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct ExtractReport {
    pub utterances: usize,
    pub mean_diagonality: f64,
    /// Whether every utterance's attended indices were non-decreasing.
    pub monotone: bool,
}

/// Writes the durations sidecar for every corpus utterance, in corpus order.
pub fn extract(cfg: &PipelineConfig, checkpoint: &Path, out: &Path, dump: Option<&Path>) -> Result<ExtractReport> {
    let model = load_teacher(cfg, checkpoint)?;
    let (audio, train, eval) = load_corpus(cfg)?;
    let all: Vec<Utterance> = train.into_iter().chain(eval).collect();
    let mels = unit_mels(&all, &audio)?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let window = Some(cfg.location_window());
    let mut entries = Vec::with_capacity(all.len());
    let (mut diag, mut monotone) = (0.0, true);
    for (u, mel) in all.iter().zip(&mels) {
        let al = extract_durations(&model, &u.phoneme_ids, mel, window)?;
        let total: usize = al.durations.iter().sum();
        if total != mel.frames {
            return Err(Error::Data(format!(
                "utterance {}: durations sum to {total}, expected {}",
                u.id, mel.frames
            )));
        }
        diag += diagonality(&al.indices, u.phoneme_ids.len()) / all.len() as f64;
        monotone &= al.indices.windows(2).all(|w| w[0] <= w[1]);
        if let Some(dir) = dump {
            al.attention.write_pgm(&dir.join(format!("{}.pgm", u.id)))?;
            let mut ck = Checkpoint::new(0);
            let a = &al.attention;
            ck.push(NamedTensor::new("attention", vec![1, a.phonemes as u32, a.frames as u32], a.values.clone()));
            ck.save(&dir.join(format!("{}.att", u.id)))?;
        }
        entries.push((u.id.clone(), al.durations));
    }
    write_durations(out, &entries)?;
    Ok(ExtractReport {
        utterances: entries.len(),
        mean_diagonality: diag,
        monotone,
    })
}

struct StudentData {
    ids: Vec<Vec<usize>>,
    durations: Vec<Vec<usize>>,
    mels: Vec<MelSpectrogram>,
}

impl StudentData {
    fn batch(&self, idx: &[usize]) -> Result<StudentBatch> {
        let items: Vec<(&[usize], &[usize], &MelSpectrogram)> = idx
            .iter()
            .map(|&i| (self.ids[i].as_slice(), self.durations[i].as_slice(), &self.mels[i]))
            .collect();
        StudentBatch::new(&items)
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

fn student_data(
    utts: &[Utterance],
    table: &HashMap<String, Vec<usize>>,
    sidecar: &Path,
    audio: &AudioConfig,
    stats: &CorpusStats,
) -> Result<StudentData> {
    let mut data = StudentData {
        ids: Vec::new(),
        durations: Vec::new(),
        mels: Vec::new(),
    };
    for u in utts {
        let d = table.get(&u.id).ok_or_else(|| {
            Error::Data(format!("utterance {} is missing from durations file {}", u.id, sidecar.display()))
        })?;
        if d.len() != u.phoneme_ids.len() || d.iter().sum::<usize>() != u.mel.frames {
            return Err(Error::Data(format!(
                "utterance {}: durations in {} do not match its {} phonemes and {} frames",
                u.id,
                sidecar.display(),
                u.phoneme_ids.len(),
                u.mel.frames
            )));
        }
        data.ids.push(u.phoneme_ids.clone());
        data.durations.push(d.clone());
        data.mels.push(u.mel.normalize(NormTarget::Standardized, audio, Some(stats))?);
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug)]
pub struct StudentEval {
    pub mae: f64,
    pub ssim: f64,
    pub duration: f64,
}

impl StudentEval {
    pub fn total(&self) -> f64 {
        self.mae + (1.0 - self.ssim) + self.duration
    }
}

fn evaluate_student(model: &StudentModel, data: &StudentData, batch_size: usize) -> Result<StudentEval> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut acc = StudentEval {
        mae: 0.0,
        ssim: 0.0,
        duration: 0.0,
    };
    for chunk in idx.chunks(batch_size) {
        let batch = data.batch(chunk)?;
        let l = no_grad(|| student_losses(model, &batch, false))?;
        let w = chunk.len() as f64 / data.len() as f64;
        acc.mae += l.mae.item() as f64 * w;
        acc.ssim += l.ssim.item() as f64 * w;
        acc.duration += l.duration.item() as f64 * w;
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct StudentReport {
    pub steps: u64,
    pub epochs: usize,
    /// Eval-mode losses over the training utterances after the last epoch.
    pub train: StudentEval,
    pub eval: Option<StudentEval>,
    pub final_lr: f32,
}

pub fn train_student(opts: &TrainOptions, sidecar: &Path) -> Result<StudentReport> {
    let cfg = &opts.config;
    let (audio, train, eval) = load_corpus(cfg)?;
    let table: HashMap<String, Vec<usize>> = read_durations(sidecar)?.into_iter().collect();
    let vocab = PhonemeVocabulary::standard();
    let scfg = cfg.student_config(vocab.len());
    let hash = student_hash(&scfg);
    let model = StudentModel::new(scfg, &mut ChaCha8Rng::seed_from_u64(cfg.optim.seed))?;
    let plateau = LrSchedule::plateau(cfg.optim.learning_rate, cfg.student.plateau_factor, cfg.student.plateau_patience);

    let (mut state, stats) = match &opts.resume {
        Some(path) => {
            let loaded = Loaded::open(path, ModelKind::Student)?;
            loaded.load_model(hash, &model)?;
            (loaded.train_state(cfg.optim.clip, Some(plateau))?, loaded.stats()?)
        }
        None => {
            let mut s = TrainState::new(cfg.optim.clip);
            s.schedule = Some(plateau);
            (s, CorpusStats::compute(train.iter().map(|u| &u.mel))?)
        }
    };
    let train_data = student_data(&train, &table, sidecar, &audio, &stats)?;
    let eval_data = student_data(&eval, &table, sidecar, &audio, &stats)?;

    let bs = cfg.optim.batch_size.min(train.len());
    let append = opts.resume.is_some();
    let mut steps = MetricsLog::open(
        &opts.step_log(),
        &["step", "epoch", "lr", "mae", "ssim", "duration", "grad_norm"],
        append,
    )?;
    let mut epochs = MetricsLog::open(
        &opts.epoch_log(),
        &["epoch", "step", "lr", "train_mae", "train_ssim", "train_duration", "eval_mae", "eval_ssim", "eval_duration"],
        append,
    )?;
    let checkpoint = |state: &TrainState, path: &Path| {
        save(
            path,
            &SaveRequest {
                kind: ModelKind::Student,
                arch_hash: hash,
                model: &model,
                config: cfg,
                state,
                stats: Some(stats),
            },
        )
    };

    while state.epoch < cfg.student.epochs {
        let mut rng = epoch_rng(cfg.optim.seed, state.epoch);
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut rng);
        let lr = state.schedule.as_ref().expect("plateau schedule").learning_rate(state.step + 1)?;
        let mut sums = [0.0f64; 3];
        for chunk in order.chunks(bs) {
            let batch = train_data.batch(chunk)?;
            state.step += 1;
            let s = student_training_step(&model, &batch, &mut state.adam, lr)?;
            for (acc, v) in sums.iter_mut().zip([s.mae, s.ssim, s.duration]) {
                *acc += v as f64;
            }
            steps.row(&[
                state.step.to_string(),
                (state.epoch + 1).to_string(),
                format!("{lr:.8}"),
                fmt(s.mae as f64),
                fmt(s.ssim as f64),
                fmt(s.duration as f64),
                fmt(s.grad_norm as f64),
            ])?;
        }
        state.epoch += 1;
        let n = order.chunks(bs).len() as f64;
        let train_mean = StudentEval {
            mae: sums[0] / n,
            ssim: sums[1] / n,
            duration: sums[2] / n,
        };
        let ev = if eval_data.len() > 0 {
            Some(evaluate_student(&model, &eval_data, bs)?)
        } else {
            None
        };
        let metric = ev.unwrap_or(train_mean).total() as f32;
        state.schedule.as_mut().expect("plateau schedule").observe(metric);
        epochs.row(&[
            state.epoch.to_string(),
            state.step.to_string(),
            format!("{lr:.8}"),
            fmt(train_mean.mae),
            fmt(train_mean.ssim),
            fmt(train_mean.duration),
            fmt(ev.map_or(f64::NAN, |e| e.mae)),
            fmt(ev.map_or(f64::NAN, |e| e.ssim)),
            fmt(ev.map_or(f64::NAN, |e| e.duration)),
        ])?;
        if opts.log {
            eprintln!(
                "student epoch {} step {}: lr {lr:.2e} mae {:.4} ssim {:.4} duration {:.4}",
                state.epoch, state.step, train_mean.mae, train_mean.ssim, train_mean.duration
            );
        }
        let every = cfg.optim.checkpoint_every;
        if every > 0 && state.epoch % every == 0 && state.epoch < cfg.student.epochs {
            steps.flush()?;
            epochs.flush()?;
            checkpoint(&state, &opts.out)?;
        }
    }
    steps.flush()?;
    epochs.flush()?;
    checkpoint(&state, &opts.out)?;
    let final_lr = state.schedule.as_ref().expect("plateau schedule").learning_rate(state.step + 1)?;
    Ok(StudentReport {
        steps: state.step,
        epochs: state.epoch,
        train: evaluate_student(&model, &train_data, bs)?,
        eval: if eval_data.len() > 0 {
            Some(evaluate_student(&model, &eval_data, bs)?)
        } else {
            None
        },
        final_lr,
    })
}

/// A trained student with the configuration and statistics it was saved with.
pub struct LoadedStudent {
    pub config: PipelineConfig,
    pub model: StudentModel,
    pub stats: CorpusStats,
}

/// Loads a student checkpoint. With `config`, the checkpoint must match its
/// architecture; without it, the embedded configuration is used.
pub fn load_student(path: &Path, config: Option<&PipelineConfig>) -> Result<LoadedStudent> {
    let loaded = Loaded::open(path, ModelKind::Student)?;
    let cfg = match config {
        Some(c) => c.clone(),
        None => loaded.config()?,
    };
    let scfg = cfg.student_config(PhonemeVocabulary::standard().len());
    let hash = student_hash(&scfg);
    let model = StudentModel::new(scfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    loaded.load_model(hash, &model)?;
    Ok(LoadedStudent {
        config: cfg,
        model,
        stats: loaded.stats()?,
    })
}

pub enum SynthInput<'a> {
    Text(&'a str),
    Phonemes(&'a str),
}

impl SynthInput<'_> {
    pub fn phoneme_ids(&self) -> Result<Vec<usize>> {
        let vocab = PhonemeVocabulary::standard();
        let ids = match self {
            SynthInput::Text(t) => vocab.encode_text(t)?,
            SynthInput::Phonemes(p) => vocab.parse_symbols(p)?,
        };
        if ids.is_empty() {
            return Err(Error::InvalidArgument("input produced no phonemes".into()));
        }
        Ok(ids)
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisReport {
    pub frames: usize,
    pub durations: Vec<usize>,
    pub samples: usize,
    pub seconds: f64,
}

/// Phonemes to WAV through the student and Griffin-Lim.
pub fn synthesize_to_wav(
    student: &LoadedStudent,
    input: &SynthInput,
    out: &Path,
    mel_out: Option<&Path>,
    seed: u64,
) -> Result<SynthesisReport> {
    let ids = input.phoneme_ids()?;
    let audio = student.config.audio_config()?;
    let syn = &student::synthesize_batch(&student.model, &[&ids], student.stats)?[0];
    let raw = syn.mel.denormalize();
    if let Some(path) = mel_out {
        let mut ck = Checkpoint::new(0);
        ck.push(NamedTensor::new("mel", vec![1, raw.bins as u32, raw.frames as u32], raw.values.clone()));
        ck.set_meta("normalization", "raw_log");
        ck.save(path)?;
    }
    let wav = griffin_lim(&raw, &audio, student.config.synthesis.griffin_lim_iterations, seed)?;
    write_wav(out, &wav, audio.sample_rate)?;
    Ok(SynthesisReport {
        frames: raw.frames,
        durations: syn.durations.clone(),
        samples: wav.len(),
        seconds: wav.len() as f64 / audio.sample_rate as f64,
    })
}

/// Fixed input for benchmarking.
pub const BENCHMARK_TEXT: &str = "the old lighthouse keeper walked along the narrow path every evening, \
    counting the boats that returned to the harbor before the storm, and he wrote each name in a small book \
    that he kept near the window of his quiet room";

/// Rescales durations to sum to exactly `total` frames, keeping their proportions.
pub fn fit_durations(d: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = d.iter().sum();
    let w: Vec<f64> = if sum == 0 {
        vec![1.0; d.len()]
    } else {
        d.iter().map(|&v| v as f64).collect()
    };
    let ws: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|v| v / ws * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

/// Processing time over produced audio.
pub fn real_time_factor(seconds: f64, batch: usize, audio_seconds: f64) -> f64 {
    seconds / (batch as f64 * audio_seconds)
}

#[derive(Clone, Debug)]
pub struct BenchmarkRow {
    pub batch: usize,
    /// Mean spectrogram time over the timed runs.
    pub spectrogram: f64,
    /// Fastest single spectrogram run.
    pub spectrogram_best: f64,
    pub vocoder: f64,
    pub total: f64,
    pub rtf: f64,
    pub audio_seconds: f64,
}

pub struct BenchmarkSpec<'a> {
    pub phonemes: &'a [usize],
    pub frames: usize,
    pub batch_sizes: &'a [usize],
    pub repeats: usize,
    pub griffin_lim_iterations: usize,
    pub seed: u64,
}

/// Spectrogram and vocoder timings per batch size, averaged over `repeats`
/// runs after one untimed warmup run.
pub fn benchmark(student: &LoadedStudent, spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRow>> {
    if spec.repeats == 0 || spec.batch_sizes.contains(&0) || spec.frames == 0 {
        return Err(Error::InvalidArgument("repeats, batch sizes and frames must be positive".into()));
    }
    let audio = student.config.audio_config()?;
    let audio_seconds = spec.frames as f64 * audio.hop_length as f64 / audio.sample_rate as f64;
    let fix = |d: Vec<usize>| fit_durations(&d, spec.frames);
    let mut rows = Vec::new();
    for &b in spec.batch_sizes {
        let items: Vec<&[usize]> = vec![spec.phonemes; b];
        let run = || -> Result<(f64, f64)> {
            let t0 = Instant::now();
            let out: Vec<Synthesis> = student::synthesize_batch_with(&student.model, &items, student.stats, fix)?;
            let t1 = Instant::now();
            for s in &out {
                griffin_lim(&s.mel.denormalize(), &audio, spec.griffin_lim_iterations, spec.seed)?;
            }
            let t2 = Instant::now();
            Ok(((t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64()))
        };
        run()?;
        let (mut sg, mut voc, mut best) = (0.0, 0.0, f64::INFINITY);
        for _ in 0..spec.repeats {
            let (a, v) = run()?;
            sg += a;
            voc += v;
            best = best.min(a);
        }
        let (sg, voc) = (sg / spec.repeats as f64, voc / spec.repeats as f64);
        rows.push(BenchmarkRow {
            batch: b,
            spectrogram: sg,
            spectrogram_best: best,
            vocoder: voc,
            total: sg + voc,
            rtf: real_time_factor(sg + voc, b, audio_seconds),
            audio_seconds,
        });
    }
    Ok(rows)
}

/// Machine-readable table of benchmark rows.
pub fn benchmark_table(rows: &[BenchmarkRow]) -> String {
    let mut s = String::from("batch,sgram_s,audio_s,total_s,rtf,sgram_rtf\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.batch,
            r.spectrogram,
            r.vocoder,
            r.total,
            r.rtf,
            real_time_factor(r.spectrogram, r.batch, r.audio_seconds)
        ));
    }
    s
}
