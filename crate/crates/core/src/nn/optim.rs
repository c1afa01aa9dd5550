//! Adam with global-norm gradient clipping, and learning-rate schedules.

use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

/// Adam state keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global L2 norm the gradients are clipped to; `None` disables clipping.
    pub clip_threshold: Option<f32>,
    pub step: u64,
    pub moments: HashMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(Some(1.0))
    }
}

impl Adam {
    pub fn new(clip_threshold: Option<f32>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_threshold,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// One update over `params`; returns the pre-clipping global gradient norm.
    ///
    /// Missing gradients count as zero. Gradients are cleared afterwards.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f32) -> Result<f32> {
        let grads: Vec<Vec<f32>> = params
            .iter()
            .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        for ((name, _), g) in params.iter().zip(&grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32;
        let clip_scale = match self.clip_threshold {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        for ((name, p), g) in params.iter().zip(grads) {
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: vec![0.0; p.numel()],
                second: vec![0.0; p.numel()],
            });
            if m.first.len() != p.numel() {
                return Err(Error::Shape(format!("optimizer state for {name} has wrong size")));
            }
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let gi = g[i] * clip_scale;
                m.first[i] = self.beta1 * m.first[i] + (1.0 - self.beta1) * gi;
                m.second[i] = self.beta2 * m.second[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m.first[i] as f64 / bc1;
                let vhat = m.second[i] as f64 / bc2;
                data[i] -= (lr as f64 * mhat / (vhat.sqrt() + self.eps as f64)) as f32;
            }
            drop(data);
            p.zero_grad();
        }
        Ok(norm)
    }
}

/// Learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    /// Linear warmup then inverse-square-root decay, peaking at `warmup_steps`.
    Noam { base: f32, warmup_steps: u64 },
    /// Multiplies the rate by `factor` after `patience` evaluations without improvement.
    ReduceOnPlateau {
        base: f32,
        factor: f32,
        patience: u32,
        current: f32,
        best: f32,
        bad_evals: u32,
    },
}

impl LrSchedule {
    pub fn noam(base: f32, warmup_steps: u64) -> Self {
        LrSchedule::Noam {
            base,
            warmup_steps: warmup_steps.max(1),
        }
    }

    pub fn plateau(base: f32, factor: f32, patience: u32) -> Self {
        LrSchedule::ReduceOnPlateau {
            base,
            factor,
            patience,
            current: base,
            best: f32::INFINITY,
            bad_evals: 0,
        }
    }

    /// Learning rate for optimizer step `step` (1-based).
    pub fn learning_rate(&self, step: u64) -> Result<f32> {
        match *self {
            LrSchedule::Noam { base, warmup_steps } => {
                if step == 0 {
                    return Err(Error::InvalidArgument("Noam schedule is defined for step >= 1".into()));
                }
                let (s, w) = (step as f64, warmup_steps as f64);
                let lr = base as f64 * w.sqrt() * (s * w.powf(-1.5)).min(s.powf(-0.5));
                Ok(lr as f32)
            }
            LrSchedule::ReduceOnPlateau { current, .. } => Ok(current),
        }
    }

    /// Feeds an evaluation metric (lower is better). No-op for Noam.
    pub fn observe(&mut self, metric: f32) {
        if let LrSchedule::ReduceOnPlateau {
            factor,
            patience,
            current,
            best,
            bad_evals,
            ..
        } = self
        {
            if metric < *best {
                *best = metric;
                *bad_evals = 0;
            } else {
                *bad_evals += 1;
                if *bad_evals >= *patience {
                    *current *= *factor;
                    *bad_evals = 0;
                }
            }
        }
    }
}

/// Schedule query in one call: feeds `metric` (plateau variant) then returns the rate.
pub fn schedule_lr(schedule: &mut LrSchedule, step: u64, metric: Option<f32>) -> Result<f32> {
    if let LrSchedule::ReduceOnPlateau { .. } = schedule {
        let m = metric.ok_or_else(|| {
            Error::InvalidArgument("reduce-on-plateau schedule requires a metric".into())
        })?;
        schedule.observe(m);
    }
    schedule.learning_rate(step)
}
