//! Pre-training loop: optimizer, schedules, progressive resolution,
//! checkpoints and metrics.

mod loader;
mod optim;
mod schedule;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use loader::Prepared;
pub use optim::{adamw_step, decay_exempt, AdamWConfig, OptimState};
pub use schedule::{lr_at, LrShape, Schedule, Stage, StageSchedule, LR_REFERENCE_BATCH};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imageio::{normalize, Dataset, ImageBatch, NormStats};
use crate::masking::{sample_mask, BlockMask};
use crate::models::{Checkpoint, ModelBundle};
use crate::objective::{extract_targets, masked_l2_loss};
use crate::rng;
use crate::tensor::{describe, Tensor};
use loader::{BatchPlan, Loader};

/// Checkpoint record holding the number of completed steps.
pub const STEP_RECORD: &str = "trainer.step";
pub const METRICS_FILE: &str = "metrics.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Largest step count an `f32` step record holds exactly.
const MAX_RECORDED_STEP: u64 = 1 << 24;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Milliseconds since the trainer was created.
    pub wall_ms: f64,
    pub lr: f64,
    pub loss: f64,
    pub imgs_per_sec: f64,
    pub stage: usize,
    pub resolution: usize,
}

/// Wall time of the parts of one step, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    /// Batch preparation, masking and target extraction.
    pub data_ms: f64,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub optim_ms: f64,
}

impl StepTiming {
    pub fn total_ms(&self) -> f64 {
        self.data_ms + self.forward_ms + self.backward_ms + self.optim_ms
    }
}

/// Header line of a metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub digest: String,
    pub total_steps: u64,
    pub start_step: u64,
}

/// Reads the step records of a metrics log, skipping header lines.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || serde_json::from_str::<RunHeader>(&line).is_ok() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "metrics log",
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn stage_checkpoint_name(stage: usize) -> String {
    format!("stage{stage}.ckpt")
}

pub struct Trainer {
    config: RunConfig,
    digest: String,
    stats: NormStats,
    model: ModelBundle<f32>,
    optim: OptimState<f32>,
    stages: StageSchedule,
    schedule: Schedule,
    plan: BatchPlan,
    loader: Option<Loader>,
    steps_per_epoch: u64,
    step: u64,
    created: Instant,
    timing: StepTiming,
}

impl Trainer {
    /// Validates `config` and initializes a fresh model at step 0.
    pub fn new(config: RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let bs = config.schedule.batch_size;
        let steps_per_epoch = (dataset.len() / bs) as u64;
        if steps_per_epoch == 0 {
            return Err(Error::config(format!(
                "dataset of {} images is smaller than one batch of {bs}",
                dataset.len()
            )));
        }
        let stages = config.stage_schedule()?;
        let total_steps = stages.total_epochs() * steps_per_epoch;
        let warmup_steps = (config.warmup_epochs(&stages) * steps_per_epoch as f64).round() as u64;
        let schedule = Schedule {
            base_lr: config.schedule.base_lr,
            batch_size: bs,
            warmup_steps,
            total_steps,
            shape: config.schedule.shape,
        };
        schedule.validate()?;
        let seed = config.data.seed;
        let model = ModelBundle::new(config.model_config(), rng::derive(seed, &[0x6d6f64656c]))?;
        let optim = OptimState::new(config.optim, model.params());
        let stats = config.norm_stats(&dataset);
        let plan = BatchPlan {
            dataset: Arc::new(dataset),
            seed,
            batch_size: bs,
            steps_per_epoch,
            stages: stages.clone(),
            augment: config.data.augment,
        };
        Ok(Trainer {
            digest: config.digest(),
            config,
            stats,
            model,
            optim,
            stages,
            schedule,
            plan,
            loader: None,
            steps_per_epoch,
            step: 0,
            created: Instant::now(),
            timing: StepTiming::default(),
        })
    }

    /// Continues from a checkpoint written by a trainer with the same config.
    pub fn resume(config: RunConfig, dataset: Dataset, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(config, dataset)?;
        if ck.digest != t.digest {
            return Err(Error::config(format!(
                "checkpoint was written for config {}, not {}",
                ck.digest, t.digest
            )));
        }
        let step = ck
            .get(STEP_RECORD)
            .filter(|s| s.numel() == 1)
            .map(|s| s.item() as u64)
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                reason: format!("missing {STEP_RECORD}"),
            })?;
        if step > t.schedule.total_steps {
            return Err(Error::Format {
                what: "checkpoint",
                reason: format!("step {step} is past the end of training ({})", t.schedule.total_steps),
            });
        }
        t.model.load_state(&ck.records)?;
        t.optim.load(step, &ck.records)?;
        t.step = step;
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn model(&self) -> &ModelBundle<f32> {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimState<f32> {
        &self.optim
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn stages(&self) -> &StageSchedule {
        &self.stages
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    /// Phase timings of the most recent step.
    pub fn last_timing(&self) -> StepTiming {
        self.timing
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.total_steps
    }

    /// Batch the next step will train on.
    pub fn peek_batch(&self) -> Result<Prepared> {
        self.plan.prepare(self.step)
    }

    fn next_batch(&mut self) -> Result<Prepared> {
        if self.loader.as_ref().is_none_or(|l| l.position() != self.step) {
            let d = &self.config.data;
            self.loader = Some(Loader::new(
                self.plan.clone(),
                self.step,
                self.schedule.total_steps,
                d.workers,
                d.prefetch,
            ));
        }
        self.loader.as_mut().unwrap().next()
    }

    /// Mask for the batch of global `step`.
    pub fn mask_for(&self, step: u64, resolution: usize) -> Result<BlockMask> {
        let seed = rng::derive(self.config.data.seed, &[0x6d61736b, step]);
        sample_mask(
            self.config.schedule.batch_size,
            (resolution, resolution),
            &self.config.mask.mask_config(),
            seed,
        )
    }

    /// Model input: the masked, normalized batch.
    pub fn model_input(&self, clean: &Tensor<f32>, mask: &BlockMask) -> Result<Tensor<f32>> {
        if self.config.mask.before_norm {
            normalize(&self.model.mask_input(clean, mask)?, &self.stats)
        } else {
            self.model.mask_input(&normalize(clean, &self.stats)?, mask)
        }
    }

    /// Runs one optimization step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::Contract(format!("training already finished at step {}", self.step)));
        }
        let started = Instant::now();
        let step = self.step;
        let batch = self.next_batch()?;
        let res = batch.resolution;
        let clean = ImageBatch::<f32>::from_images(&batch.images, batch.source_ids.clone())?;
        let mask = self.mask_for(step, res)?;
        let input = self.model_input(&clean.data, &mask)?;
        let t = &self.config.target;
        let target = extract_targets(&clean, &mask, t.kind, &t.hog, &self.stats)?;
        let lr = lr_at(&self.schedule, step);
        let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
        let mut timing = StepTiming {
            data_ms: ms(started),
            ..Default::default()
        };
        let phase = Instant::now();
        let diverged = |what: String| Error::Diverged {
            step,
            detail: format!(
                "{what} at lr {lr:.3e}; sources {:?}; input [{}]; target [{}]",
                batch.source_ids,
                describe(&input.data()),
                describe(&target.data.data()),
            ),
        };
        let loss = match self
            .model
            .forward(&input, &mask)
            .and_then(|pred| masked_l2_loss(&pred, &target))
        {
            Err(e @ Error::Numeric { .. }) => return Err(diverged(e.to_string())),
            other => other?,
        };
        let value = loss.item() as f64;
        if !value.is_finite() {
            return Err(diverged(format!("loss {value}")));
        }
        timing.forward_ms = ms(phase);
        let phase = Instant::now();
        self.model.zero_grad();
        loss.backward()?;
        timing.backward_ms = ms(phase);
        let phase = Instant::now();
        adamw_step(self.model.params(), &mut self.optim, lr)?;
        timing.optim_ms = ms(phase);
        self.timing = timing;
        self.step += 1;
        let secs = started.elapsed().as_secs_f64();
        Ok(StepRecord {
            step,
            wall_ms: self.created.elapsed().as_secs_f64() * 1e3,
            lr,
            loss: value,
            imgs_per_sec: batch.images.len() as f64 / secs.max(1e-9),
            stage: self.stages.stage_at(step, self.steps_per_epoch),
            resolution: res,
        })
    }

    /// Parameters, optimizer moments and the step count.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        if self.step > MAX_RECORDED_STEP {
            return Err(Error::Contract(format!("step {} is too large to record", self.step)));
        }
        let mut records = self.model.state();
        records.extend(self.optim.records(self.model.params())?);
        records.push((STEP_RECORD.to_string(), Tensor::scalar(self.step as f32)));
        Ok(Checkpoint {
            digest: self.digest.clone(),
            records,
        })
    }

    /// Trains up to `until` (clamped to the end), appending metrics to
    /// `out/metrics.ndjson` and writing a checkpoint at each stage boundary and
    /// at the end when `out` is given.
    pub fn run(&mut self, until: Option<u64>, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        let end = until.unwrap_or(u64::MAX).min(self.schedule.total_steps);
        let boundaries = self.stages.boundaries(self.steps_per_epoch);
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut f = OpenOptions::new().create(true).append(true).open(dir.join(METRICS_FILE))?;
                let header = RunHeader {
                    digest: self.digest.clone(),
                    total_steps: self.schedule.total_steps,
                    start_step: self.step,
                };
                writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))?;
                Some(f)
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < end {
            let r = self.train_step()?;
            log::debug!("step {} loss {:.5} lr {:.3e}", r.step, r.loss, r.lr);
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&r).expect("record serializes"))?;
            }
            records.push(r);
            if let Some(dir) = out {
                let inner = &boundaries[1..boundaries.len() - 1];
                if let Some(i) = inner.iter().position(|&b| b == self.step) {
                    log::info!("stage {i} finished at step {}", self.step);
                    self.checkpoint()?.save(&dir.join(stage_checkpoint_name(i)))?;
                }
                if self.is_done() {
                    self.checkpoint()?.save(&dir.join(FINAL_CHECKPOINT))?;
                }
            }
        }
        if let Some(f) = log.as_mut() {
            f.flush()?;
        }
        Ok(records)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<StepRecord>,
    pub out_dir: Option<PathBuf>,
}

fn train_all(config: RunConfig, dataset: Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config, dataset)?;
    let records = t.run(None, out)?;
    Ok(TrainOutcome {
        checkpoint: t.checkpoint()?,
        records,
        out_dir: out.map(Path::to_path_buf),
    })
}

/// Single-resolution pre-training.
pub fn pretrain(config: RunConfig, dataset: Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    if config.schedule.stages.len() != 1 {
        return Err(Error::config(format!(
            "pretrain needs exactly one stage, got {}; use progressive pre-training",
            config.schedule.stages.len()
        )));
    }
    train_all(config, dataset, out)
}

/// Multi-stage pre-training with growing resolution under one global
/// learning-rate schedule. Positional encodings and attention windows follow
/// the input size, so stage changes leave every parameter untouched.
pub fn pretrain_progressive(config: RunConfig, dataset: Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
    train_all(config, dataset, out)
}
