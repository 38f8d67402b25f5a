//! Learning-rate schedules and progressive-resolution stages.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch size the base learning rate refers to.
pub const LR_REFERENCE_BATCH: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrShape {
    Cosine,
    /// Constant, then x0.1 from 90% of training on.
    Step,
}

/// Warmup plus decay over a global step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub shape: LrShape,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be > 0"));
        }
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::config(format!(
                "warmup ({} steps) must be shorter than training ({} steps)",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Peak rate after linear batch scaling.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / LR_REFERENCE_BATCH
    }
}

/// Rate for global `step`: linear from 0 over the warmup, then the decay
/// shape; cosine reaches exactly 0 at `total_steps`.
pub fn lr_at(s: &Schedule, step: u64) -> f64 {
    let peak = s.effective_lr();
    if step < s.warmup_steps {
        return peak * step as f64 / s.warmup_steps as f64;
    }
    match s.shape {
        LrShape::Cosine => {
            let span = (s.total_steps - s.warmup_steps) as f64;
            let t = ((step - s.warmup_steps) as f64 / span).min(1.0);
            0.5 * peak * (1.0 + (PI * t).cos())
        }
        LrShape::Step => {
            if step as f64 >= 0.9 * s.total_steps as f64 {
                0.1 * peak
            } else {
                peak
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Square input side in pixels.
    pub resolution: usize,
    pub epochs: u64,
}

/// Ordered training stages; resolution never decreases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>, mask_size: usize) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::config("stage schedule is empty"));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::config(format!("stage {i} has no epochs")));
            }
            if mask_size == 0 || s.resolution % mask_size != 0 {
                return Err(Error::config(format!(
                    "stage {i}: resolution {} is not divisible by mask_size {mask_size}",
                    s.resolution
                )));
            }
            if i > 0 && s.resolution < stages[i - 1].resolution {
                return Err(Error::config(format!(
                    "stage {i}: resolution {} is below the previous {}",
                    s.resolution,
                    stages[i - 1].resolution
                )));
            }
        }
        Ok(StageSchedule { stages })
    }

    pub fn total_epochs(&self) -> u64 {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// First global step of every stage, plus the end.
    pub fn boundaries(&self, steps_per_epoch: u64) -> Vec<u64> {
        let mut out = vec![0];
        for s in &self.stages {
            out.push(out.last().unwrap() + s.epochs * steps_per_epoch);
        }
        out
    }

    /// Stage index active at global `step` (the last one past the end).
    pub fn stage_at(&self, step: u64, steps_per_epoch: u64) -> usize {
        let b = self.boundaries(steps_per_epoch);
        (0..self.stages.len()).find(|&i| step < b[i + 1]).unwrap_or(self.stages.len() - 1)
    }
}
