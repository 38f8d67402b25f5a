use serde::{Deserialize, Serialize};

use super::{cost_model, CostReport, Regime, REFERENCE_RESOLUTION};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::{Stage, StepTiming, Trainer};

pub type PhaseTimes = StepTiming;

/// Median timings of full training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub regime: Regime,
    pub resolution: usize,
    pub batch_size: usize,
    pub encoder_blocks: usize,
    /// Steps that entered the medians.
    pub measured_steps: usize,
    pub step_ms: f64,
    pub imgs_per_sec: f64,
    pub phases: PhaseTimes,
    /// Activations for one batch plus parameters, gradients and both
    /// optimizer moments, as `f32`.
    pub peak_bytes_estimate: f64,
    /// Analytic cost of the measured configuration.
    pub cost: CostReport,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `steps` training steps of `config` (first stage resolution) and
/// reports medians over the steps after `warmup_steps`. Batches are prepared
/// inline so nothing runs in the background while timing.
pub fn throughput_run(config: &RunConfig, steps: usize, warmup_steps: usize) -> Result<Throughput> {
    if steps <= warmup_steps {
        return Err(Error::config(format!("steps ({steps}) must exceed warmup_steps ({warmup_steps})")));
    }
    let measured = steps - warmup_steps;
    if measured < 5 {
        log::warn!("only {measured} timed steps; the median may be unstable");
    }
    let mut c = config.clone();
    c.data.workers = 0;
    let resolution = c
        .schedule
        .stages
        .first()
        .ok_or_else(|| Error::config("no training stage configured"))?
        .resolution;
    let dataset = c.dataset()?;
    let per_epoch = (dataset.len() / c.schedule.batch_size.max(1)).max(1);
    c.schedule.stages = vec![Stage {
        resolution,
        epochs: steps.div_ceil(per_epoch) as u64 + 1,
    }];
    let mut trainer = Trainer::new(c.clone(), dataset)?;
    let mut totals = Vec::with_capacity(measured);
    let mut phases: [Vec<f64>; 4] = Default::default();
    for i in 0..steps {
        let t0 = std::time::Instant::now();
        trainer.train_step()?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        if i >= warmup_steps {
            let p = trainer.last_timing();
            totals.push(elapsed);
            for (v, x) in phases.iter_mut().zip([p.data_ms, p.forward_ms, p.backward_ms, p.optim_ms]) {
                v.push(x);
            }
        }
    }
    let enc = &c.model.encoder;
    let regime = if enc.discard_masked {
        Regime::MaeDiscard
    } else if resolution < REFERENCE_RESOLUTION {
        Regime::FastmimLowres
    } else {
        Regime::MimFull
    };
    let cost = cost_model(enc, &c.model.decoder, resolution, &c.mask.mask_config(), regime)?;
    let bs = c.schedule.batch_size;
    let params = trainer.model().num_params() as f64;
    let step_ms = median(totals);
    let [data, fwd, bwd, opt] = phases.map(median);
    Ok(Throughput {
        regime,
        resolution,
        batch_size: bs,
        encoder_blocks: cost.encoder_blocks,
        measured_steps: measured,
        step_ms,
        imgs_per_sec: bs as f64 * 1e3 / step_ms,
        phases: PhaseTimes {
            data_ms: data,
            forward_ms: fwd,
            backward_ms: bwd,
            optim_ms: opt,
        },
        peak_bytes_estimate: 4.0 * (cost.activation_elements * bs as f64 + 4.0 * params),
        cost,
    })
}
