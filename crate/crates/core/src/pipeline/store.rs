//! Checkpoints that carry enough state to resume training or run inference:
//! model tensors, optimizer moments, counters, schedule state, the config
//! text and corpus statistics.

use std::path::Path;

use super::config::PipelineConfig;
use crate::audio::CorpusStats;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, NamedTensor};
use crate::nn::optim::Moments;
use crate::nn::{Adam, LrSchedule, Module};

pub const MODEL_PREFIX: &str = "model";
const FIRST: &str = "adam.first.";
const SECOND: &str = "adam.second.";

/// Progress counters and optimizer state saved alongside a model.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub adam: Adam,
    pub schedule: Option<LrSchedule>,
}

impl TrainState {
    pub fn new(clip: f32) -> Self {
        Self {
            step: 0,
            epoch: 0,
            adam: Adam::new(Some(clip)),
            schedule: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Teacher,
    Student,
}

impl ModelKind {
    fn tag(self) -> &'static str {
        match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
        }
    }
}

pub struct SaveRequest<'a> {
    pub kind: ModelKind,
    pub arch_hash: u64,
    pub model: &'a dyn Module,
    pub config: &'a PipelineConfig,
    pub state: &'a TrainState,
    pub stats: Option<CorpusStats>,
}

pub fn save(path: &Path, req: &SaveRequest) -> Result<()> {
    let mut ck = Checkpoint::new(req.arch_hash);
    ck.push_module(MODEL_PREFIX, req.model);
    let mut names: Vec<&String> = req.state.adam.moments.keys().collect();
    names.sort();
    for name in names {
        let m = &req.state.adam.moments[name];
        let dims = vec![1, 1, m.first.len() as u32];
        ck.push(NamedTensor::new(format!("{FIRST}{name}"), dims.clone(), m.first.clone()));
        ck.push(NamedTensor::new(format!("{SECOND}{name}"), dims, m.second.clone()));
    }
    ck.set_meta("kind", req.kind.tag());
    ck.set_meta("config", req.config.render());
    ck.set_meta("step", req.state.step.to_string());
    ck.set_meta("epoch", req.state.epoch.to_string());
    ck.set_meta("adam_step", req.state.adam.step.to_string());
    if let Some(LrSchedule::ReduceOnPlateau {
        current, best, bad_evals, ..
    }) = &req.state.schedule
    {
        ck.set_meta("plateau", format!("{current:?} {best:?} {bad_evals}"));
    }
    if let Some(s) = req.stats {
        ck.set_meta("stats", format!("{:?} {:?}", s.mean, s.std));
    }
    // Write then rename so an interrupted save never leaves a truncated file behind.
    let tmp = path.with_extension("partial");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A checkpoint read back from disk, before it is applied to a model.
pub struct Loaded {
    pub checkpoint: Checkpoint,
}

impl Loaded {
    pub fn open(path: &Path, kind: ModelKind) -> Result<Self> {
        let checkpoint = Checkpoint::load(path)?;
        let found = checkpoint.meta("kind").unwrap_or("unknown");
        if found != kind.tag() {
            return Err(Error::Format(format!(
                "{}: expected a {} checkpoint, found {found}",
                path.display(),
                kind.tag()
            )));
        }
        Ok(Self { checkpoint })
    }

    /// The configuration text stored at save time.
    pub fn config(&self) -> Result<PipelineConfig> {
        let text = self.checkpoint.meta("config").ok_or_else(|| Error::Format("checkpoint has no config".into()))?;
        PipelineConfig::parse(text)
    }

    pub fn stats(&self) -> Result<CorpusStats> {
        let text = self
            .checkpoint
            .meta("stats")
            .ok_or_else(|| Error::Format("checkpoint has no normalization statistics".into()))?;
        let v = parse_floats(text, 2)?;
        Ok(CorpusStats { mean: v[0], std: v[1] })
    }

    /// Copies the model tensors, verifying the architecture hash first.
    pub fn load_model(&self, arch_hash: u64, model: &dyn Module) -> Result<()> {
        self.checkpoint.load_module(arch_hash, MODEL_PREFIX, model)
    }

    /// Counters, optimizer moments and schedule state for resuming.
    pub fn train_state(&self, clip: f32, schedule: Option<LrSchedule>) -> Result<TrainState> {
        let ck = &self.checkpoint;
        let num = |key: &str| -> Result<u64> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint metadata {key:?} missing or invalid")))
        };
        let mut adam = Adam::new(Some(clip));
        adam.step = num("adam_step")?;
        for t in &ck.tensors {
            if let Some(name) = t.name.strip_prefix(FIRST) {
                let second = ck
                    .tensor(&format!("{SECOND}{name}"))
                    .ok_or_else(|| Error::Format(format!("optimizer state for {name} is incomplete")))?;
                adam.moments.insert(
                    name.to_string(),
                    Moments {
                        first: t.data.clone(),
                        second: second.data.clone(),
                    },
                );
            }
        }
        let schedule = match (schedule, ck.meta("plateau")) {
            (Some(LrSchedule::ReduceOnPlateau { base, factor, patience, .. }), Some(text)) => {
                let v = parse_floats(text, 3)?;
                Some(LrSchedule::ReduceOnPlateau {
                    base,
                    factor,
                    patience,
                    current: v[0],
                    best: v[1],
                    bad_evals: v[2] as u32,
                })
            }
            (s, _) => s,
        };
        Ok(TrainState {
            step: num("step")?,
            epoch: num("epoch")? as usize,
            adam,
            schedule,
        })
    }
}

fn parse_floats(text: &str, n: usize) -> Result<Vec<f32>> {
    let v: Vec<f32> = text
        .split_whitespace()
        .map(|s| s.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("malformed checkpoint metadata {text:?}")))?;
    if v.len() != n {
        return Err(Error::Format(format!("malformed checkpoint metadata {text:?}")));
    }
    Ok(v)
}
