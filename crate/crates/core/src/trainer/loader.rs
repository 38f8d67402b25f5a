//! Batch preparation, optionally on background threads feeding bounded
//! queues. Every batch is a pure function of the global step, so threading
//! never changes what the training loop sees.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::schedule::StageSchedule;
use crate::error::{Error, Result};
use crate::imageio::{augment, AugmentConfig, Dataset, Image};
use crate::rng;

/// Augmented images for one step.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub step: u64,
    pub resolution: usize,
    pub images: Vec<Image>,
    pub source_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchPlan {
    pub dataset: Arc<Dataset>,
    pub seed: u64,
    pub batch_size: usize,
    pub steps_per_epoch: u64,
    pub stages: StageSchedule,
    pub augment: AugmentConfig,
}

impl BatchPlan {
    pub fn prepare(&self, step: u64) -> Result<Prepared> {
        let epoch = step / self.steps_per_epoch;
        let offset = (step % self.steps_per_epoch) as usize * self.batch_size;
        let order = self.dataset.epoch_order(self.seed, epoch);
        let stage = self.stages.stage_at(step, self.steps_per_epoch);
        let resolution = self.stages.stages[stage].resolution;
        let source_ids = order[offset..offset + self.batch_size].to_vec();
        let images = source_ids
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                let seed = rng::derive(self.seed, &[0x61756778, step, slot as u64]);
                augment(self.dataset.get(i), resolution, seed, &self.augment).map(|(img, _)| img)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            step,
            resolution,
            images,
            source_ids,
        })
    }
}

struct Worker {
    rx: Receiver<Result<Prepared>>,
    handle: JoinHandle<()>,
}

pub(crate) struct Loader {
    plan: BatchPlan,
    /// Worker `w` prepares steps `start + w`, `start + w + n`, ...
    workers: Vec<Worker>,
    start: u64,
    next: u64,
}

impl Loader {
    pub fn new(plan: BatchPlan, start: u64, end: u64, workers: usize, prefetch: usize) -> Self {
        let n = workers as u64;
        let workers = (0..n)
            .map(|w| {
                let (tx, rx) = sync_channel(prefetch.max(1));
                let plan = plan.clone();
                let handle = std::thread::spawn(move || {
                    let mut step = start + w;
                    while step < end {
                        if tx.send(plan.prepare(step)).is_err() {
                            return;
                        }
                        step += n;
                    }
                });
                Worker { rx, handle }
            })
            .collect();
        Loader {
            plan,
            workers,
            start,
            next: start,
        }
    }

    pub fn next(&mut self) -> Result<Prepared> {
        let step = self.next;
        self.next += 1;
        if self.workers.is_empty() {
            return self.plan.prepare(step);
        }
        let w = ((step - self.start) % self.workers.len() as u64) as usize;
        let got = self.workers[w]
            .rx
            .recv()
            .map_err(|_| Error::Contract(format!("batch worker stopped before step {step}")))??;
        if got.step != step {
            return Err(Error::Contract(format!("batch for step {} arrived at step {step}", got.step)));
        }
        Ok(got)
    }

    /// Next step this loader will hand out.
    pub fn position(&self) -> u64 {
        self.next
    }
}

impl Drop for Loader {
    fn drop(&mut self) {
        // Dropping the receivers unblocks workers waiting on a full queue.
        for w in std::mem::take(&mut self.workers) {
            drop(w.rx);
            let _ = w.handle.join();
        }
    }
}
