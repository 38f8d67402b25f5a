//! Shared fixtures for the benchmarks.

use fastmim::imageio::synthetic::synthetic_image;
use fastmim::imageio::ImageBatch;
use fastmim::models::Preset;
use fastmim::trainer::{Stage, Trainer};
use fastmim::{Result, RunConfig, Tensor};

/// Toy isotropic run at `resolution`, batch `batch`, batches prepared inline.
pub fn toy_config(resolution: usize, batch: usize, discard_masked: bool) -> RunConfig {
    let mut c = RunConfig::desk(Preset::VitToy);
    c.data.workers = 0;
    c.data.count = batch * 4;
    c.schedule.batch_size = batch;
    c.model.encoder.discard_masked = discard_masked;
    c.schedule.stages = vec![Stage { resolution, epochs: 1000 }];
    c
}

pub fn toy_trainer(resolution: usize, batch: usize, discard_masked: bool) -> Result<Trainer> {
    let c = toy_config(resolution, batch, discard_masked);
    Trainer::new(c.clone(), c.dataset()?)
}

/// `n` synthetic images of side `size` as a batch.
pub fn image_batch(n: usize, size: usize) -> Result<ImageBatch<f32>> {
    let imgs: Vec<_> = (0..n as u64).map(|i| synthetic_image(7, i, size)).collect();
    ImageBatch::from_images(&imgs, (0..n).collect())
}

/// Deterministic `[rows, cols]` matrix with entries in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize) -> Tensor<f32> {
    let data = (0..rows * cols).map(|i| ((i * 7919) % 2000) as f32 / 1000.0 - 1.0).collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape matches data")
}
