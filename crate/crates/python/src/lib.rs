//! Python bindings: configuration, phoneme vocabulary, the training and
//! extraction commands, a loaded student for synthesis and benchmarking, and
//! a few audio utilities.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use convtts::audio::{self, AudioConfig, MelSpectrogram, Normalization, PhonemeVocabulary};
use convtts::nn::kernels::set_math_threads;
use convtts::pipeline::{self, BenchmarkSpec, LoadedStudent, PipelineConfig, SynthInput, TrainOptions};
use convtts::student;

create_exception!(pyconvtts, ConvttsError, PyRuntimeError);

fn to_py(e: convtts::Error) -> PyErr {
    match e {
        convtts::Error::Config(_) | convtts::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        convtts::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => ConvttsError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for convtts::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Pipeline configuration as read from TOML.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults for every section.
    #[new]
    fn new() -> Self {
        Self {
            inner: PipelineConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::load(&path).py_err()?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::parse(text).py_err()?,
        })
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.optim.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.optim.seed = seed;
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.audio.sample_rate
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, sample_rate={})", self.inner.optim.seed, self.inner.audio.sample_rate)
    }
}

/// The fixed phoneme inventory with the bundled lexicon.
#[pyclass(name = "Vocabulary")]
struct PyVocabulary {
    inner: PhonemeVocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    fn new() -> Self {
        Self {
            inner: PhonemeVocabulary::standard(),
        }
    }

    fn encode_text(&self, text: &str) -> PyResult<Vec<usize>> {
        self.inner.encode_text(text).py_err()
    }

    /// Ids for space-separated phoneme symbols.
    fn parse_symbols(&self, text: &str) -> PyResult<Vec<usize>> {
        self.inner.parse_symbols(text).py_err()
    }

    fn decode(&self, ids: Vec<usize>) -> Vec<String> {
        self.inner.decode(&ids)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn options(config: &PyConfig, out: PathBuf, resume: Option<PathBuf>, log: bool) -> TrainOptions {
    TrainOptions {
        config: config.inner.clone(),
        out,
        resume,
        log,
    }
}

/// Writes a synthetic corpus with its configuration and returns the config path.
#[pyfunction]
#[pyo3(signature = (out, seed = 7))]
fn make_toy(out: PathBuf, seed: u64) -> PyResult<PathBuf> {
    pipeline::make_toy(&out, seed).py_err()
}

#[pyfunction]
#[pyo3(signature = (config, out, resume = None, log = false))]
fn train_teacher<'py>(
    py: Python<'py>,
    config: PyConfig,
    out: PathBuf,
    resume: Option<PathBuf>,
    log: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = options(&config, out, resume, log);
    let r = py.detach(|| pipeline::train_teacher(&opts)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("steps", r.steps)?;
    d.set_item("epochs", r.epochs)?;
    d.set_item("train_diagonality", r.train_diagonality)?;
    d.set_item("eval_diagonality", r.eval_diagonality)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (config, checkpoint, out, dump_attention = None))]
fn extract_durations<'py>(
    py: Python<'py>,
    config: PyConfig,
    checkpoint: PathBuf,
    out: PathBuf,
    dump_attention: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = py
        .detach(|| pipeline::extract(&config.inner, &checkpoint, &out, dump_attention.as_deref()))
        .py_err()?;
    let d = PyDict::new(py);
    d.set_item("utterances", r.utterances)?;
    d.set_item("mean_diagonality", r.mean_diagonality)?;
    d.set_item("monotone", r.monotone)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (config, out, durations, resume = None, log = false))]
fn train_student<'py>(
    py: Python<'py>,
    config: PyConfig,
    out: PathBuf,
    durations: PathBuf,
    resume: Option<PathBuf>,
    log: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = options(&config, out, resume, log);
    let r = py.detach(|| pipeline::train_student(&opts, &durations)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("steps", r.steps)?;
    d.set_item("epochs", r.epochs)?;
    d.set_item("learning_rate", r.final_lr)?;
    d.set_item("train_mae", r.train.mae)?;
    d.set_item("train_ssim", r.train.ssim)?;
    d.set_item("train_duration", r.train.duration)?;
    if let Some(e) = r.eval {
        d.set_item("eval_mae", e.mae)?;
        d.set_item("eval_ssim", e.ssim)?;
        d.set_item("eval_duration", e.duration)?;
    }
    Ok(d)
}

fn rows(mel: &MelSpectrogram) -> Vec<Vec<f32>> {
    mel.values.chunks(mel.frames.max(1)).map(<[f32]>::to_vec).collect()
}

fn input<'a>(text: Option<&'a str>, phonemes: Option<&'a str>) -> PyResult<SynthInput<'a>> {
    match (text, phonemes) {
        (Some(t), None) => Ok(SynthInput::Text(t)),
        (None, Some(p)) => Ok(SynthInput::Phonemes(p)),
        _ => Err(PyValueError::new_err("pass exactly one of text or phonemes")),
    }
}

/// A trained student with its corpus statistics.
#[pyclass(name = "Student", unsendable)]
struct PyStudent {
    inner: LoadedStudent,
}

#[pymethods]
impl PyStudent {
    /// Loads a checkpoint; with `config`, its architecture must match.
    #[staticmethod]
    #[pyo3(signature = (path, config = None))]
    fn load(path: PathBuf, config: Option<PyConfig>) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::load_student(&path, config.as_ref().map(|c| &c.inner)).py_err()?,
        })
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.inner.config.clone(),
        }
    }

    /// Raw log mel rows (bins x frames) and per-phoneme durations.
    #[pyo3(signature = (text = None, phonemes = None))]
    fn spectrogram<'py>(
        &self,
        py: Python<'py>,
        text: Option<&str>,
        phonemes: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let ids = input(text, phonemes)?.phoneme_ids().py_err()?;
        let syn = student::synthesize_batch(&self.inner.model, &[&ids], self.inner.stats)
            .py_err()?
            .remove(0);
        let d = PyDict::new(py);
        d.set_item("mel", rows(&syn.mel.denormalize()))?;
        d.set_item("durations", syn.durations)?;
        Ok(d)
    }

    #[pyo3(signature = (out, text = None, phonemes = None, mel_out = None, seed = 0))]
    fn synthesize<'py>(
        &self,
        py: Python<'py>,
        out: PathBuf,
        text: Option<&str>,
        phonemes: Option<&str>,
        mel_out: Option<PathBuf>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let inp = input(text, phonemes)?;
        let r = pipeline::synthesize_to_wav(&self.inner, &inp, &out, mel_out.as_deref(), seed).py_err()?;
        let d = PyDict::new(py);
        d.set_item("frames", r.frames)?;
        d.set_item("durations", r.durations)?;
        d.set_item("samples", r.samples)?;
        d.set_item("seconds", r.seconds)?;
        Ok(d)
    }

    /// Timing rows with the same columns as the command-line benchmark.
    #[pyo3(signature = (batch_sizes = vec![1, 2, 4, 8, 16], repeats = 10, frames = 838, griffin_lim_iterations = None, seed = 0))]
    fn benchmark<'py>(
        &self,
        py: Python<'py>,
        batch_sizes: Vec<usize>,
        repeats: usize,
        frames: usize,
        griffin_lim_iterations: Option<usize>,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let phonemes = PhonemeVocabulary::standard()
            .encode_text(pipeline::BENCHMARK_TEXT)
            .py_err()?;
        let spec = BenchmarkSpec {
            phonemes: &phonemes,
            frames,
            batch_sizes: &batch_sizes,
            repeats,
            griffin_lim_iterations: griffin_lim_iterations
                .unwrap_or(self.inner.config.synthesis.griffin_lim_iterations),
            seed,
        };
        pipeline::benchmark(&self.inner, &spec)
            .py_err()?
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("batch", r.batch)?;
                d.set_item("sgram_s", r.spectrogram)?;
                d.set_item("audio_s", r.audio_seconds)?;
                d.set_item("total_s", r.total)?;
                d.set_item("rtf", r.rtf)?;
                d.set_item("sgram_rtf", pipeline::real_time_factor(r.spectrogram, r.batch, r.audio_seconds))?;
                Ok(d)
            })
            .collect()
    }
}

fn audio_config(config: Option<&PyConfig>) -> PyResult<AudioConfig> {
    match config {
        Some(c) => c.inner.audio_config().py_err(),
        None => Ok(AudioConfig::default()),
    }
}

/// Raw log mel rows (bins x frames) of a mono waveform.
#[pyfunction]
#[pyo3(signature = (samples, config = None))]
fn wav_to_mel(samples: Vec<f32>, config: Option<PyConfig>) -> PyResult<Vec<Vec<f32>>> {
    let cfg = audio_config(config.as_ref())?;
    Ok(rows(&audio::wav_to_mel(&samples, &cfg).py_err()?))
}

/// Inverts raw log mel rows (bins x frames) to a peak-normalized waveform.
#[pyfunction]
#[pyo3(signature = (mel, config = None, iterations = 32, seed = 0))]
fn griffin_lim(mel: Vec<Vec<f32>>, config: Option<PyConfig>, iterations: usize, seed: u64) -> PyResult<Vec<f32>> {
    let cfg = audio_config(config.as_ref())?;
    let frames = mel.first().map_or(0, Vec::len);
    if mel.iter().any(|r| r.len() != frames) {
        return Err(PyValueError::new_err("mel rows must have equal length"));
    }
    let bins = mel.len();
    let m = MelSpectrogram::new(bins, frames, mel.concat(), Normalization::RawLog).py_err()?;
    audio::griffin_lim(&m, &cfg, iterations, seed).py_err()
}

/// Structural similarity of two row-major images.
#[pyfunction]
fn ssim_index(x: Vec<f32>, y: Vec<f32>, rows: usize, cols: usize) -> PyResult<f64> {
    student::ssim::ssim_index(&x, &y, rows, cols).py_err()
}

#[pyfunction]
fn fit_durations(durations: Vec<usize>, total: usize) -> Vec<usize> {
    pipeline::fit_durations(&durations, total)
}

/// Worker threads used by the matrix kernels.
#[pyfunction]
fn set_threads(n: usize) -> PyResult<()> {
    if n == 0 {
        return Err(PyValueError::new_err("need at least one thread"));
    }
    set_math_threads(n);
    Ok(())
}

#[pymodule]
fn pyconvtts(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConvttsError", m.py().get_type::<ConvttsError>())?;
    m.add("BENCHMARK_TEXT", pipeline::BENCHMARK_TEXT)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyStudent>()?;
    m.add_function(wrap_pyfunction!(make_toy, m)?)?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(extract_durations, m)?)?;
    m.add_function(wrap_pyfunction!(train_student, m)?)?;
    m.add_function(wrap_pyfunction!(wav_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(griffin_lim, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_index, m)?)?;
    m.add_function(wrap_pyfunction!(fit_durations, m)?)?;
    m.add_function(wrap_pyfunction!(set_threads, m)?)?;
    Ok(())
}
