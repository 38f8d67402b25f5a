//! Complete description of a pre-training run, stored as TOML.
//!
//! The digest is the SHA-256 of the canonical TOML rendering; it is written
//! into checkpoints and metrics so artifacts can be traced to their config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::imageio::{compute_norm_stats, AugmentConfig, DataFormat, Dataset, NormStats};
use crate::masking::{MaskConfig, MaskLevel};
use crate::models::{DecoderConfig, EncoderConfig, EncoderFamily, ModelConfig, Preset};
use crate::objective::TargetKind;
use crate::trainer::{AdamWConfig, LrShape, Stage, StageSchedule};

/// Environment variable that replaces `data.seed`.
pub const SEED_ENV: &str = "FASTMIM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    Imagenet,
    Identity,
    /// Per-channel statistics of the training set.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub format: DataFormat,
    /// Image directory or manifest; unused for synthetic data.
    pub root: PathBuf,
    /// Synthetic image count and side.
    pub count: usize,
    pub size: usize,
    /// Seeds data synthesis, ordering, augmentation, masks and init.
    pub seed: u64,
    pub norm_stats: NormSource,
    /// Background threads preparing batches; 0 prepares them inline.
    pub workers: usize,
    /// Prepared batches allowed to wait in the queue.
    pub prefetch: usize,
    pub augment: AugmentConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            format: DataFormat::Synthetic,
            root: PathBuf::new(),
            count: 64,
            size: 128,
            seed: 0,
            norm_stats: NormSource::Imagenet,
            workers: 1,
            prefetch: 2,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub decoder: DecoderConfig,
    pub encoder: EncoderConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            decoder: Preset::VitToy.decoder(),
            encoder: Preset::VitToy.encoder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub mask_size: usize,
    pub ratio: f64,
    pub level: MaskLevel,
    pub learnable_token: bool,
    /// Mask raw pixels, then normalize (default: mask the normalized input).
    pub before_norm: bool,
}

impl Default for MaskSection {
    fn default() -> Self {
        let m = MaskConfig::default();
        MaskSection {
            mask_size: m.mask_size,
            ratio: m.ratio,
            level: m.level,
            learnable_token: true,
            before_norm: false,
        }
    }
}

impl MaskSection {
    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig {
            mask_size: self.mask_size,
            ratio: self.ratio,
            level: self.level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub kind: TargetKind,
    pub hog: HogConfig,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            kind: TargetKind::Hog,
            hog: HogConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub base_lr: f64,
    pub batch_size: usize,
    pub shape: LrShape,
    /// Defaults to 5% of all epochs.
    pub warmup_epochs: Option<f64>,
    pub stages: Vec<Stage>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            base_lr: 1.6e-2,
            batch_size: 16,
            shape: LrShape::Cosine,
            warmup_epochs: None,
            stages: vec![Stage {
                resolution: 64,
                epochs: 50,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub mask: MaskSection,
    pub target: TargetSection,
    pub optim: AdamWConfig,
    pub schedule: ScheduleSection,
}

impl RunConfig {
    /// Small-machine defaults for a model preset: synthetic data, batch 16,
    /// a few hundred steps at 64 pixels (a multiple of the preset's mask).
    pub fn desk(preset: Preset) -> Self {
        let mut c = RunConfig::default();
        c.model.encoder = preset.encoder();
        c.model.decoder = preset.decoder();
        c.mask.mask_size = preset.mask_size();
        let res = 64usize.max(preset.mask_size() * 2).next_multiple_of(preset.mask_size());
        c.schedule.stages = vec![Stage {
            resolution: res,
            epochs: 50,
        }];
        c
    }

    /// Large-scale recipe: batch 2048, base rate 1.5e-4, 10 warmup epochs
    /// out of 400, on an image directory at 128 pixels. Hierarchical large
    /// models use the step decay.
    pub fn full_scale(preset: Preset) -> Self {
        let mut c = RunConfig::desk(preset);
        c.data.format = DataFormat::PpmDir;
        c.data.root = PathBuf::from("imagenet/train");
        c.data.workers = 8;
        c.data.prefetch = 4;
        c.schedule.base_lr = 1.5e-4;
        c.schedule.batch_size = 2048;
        c.schedule.warmup_epochs = Some(10.0);
        c.schedule.shape = if preset == Preset::SwinLarge { LrShape::Step } else { LrShape::Cosine };
        c.schedule.stages = vec![Stage {
            resolution: 128,
            epochs: 400,
        }];
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Applies `FASTMIM_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.data.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.model.encoder.clone(),
            decoder: self.model.decoder,
            mask_level: self.mask.level,
            learnable_mask_token: self.mask.learnable_token,
            target: self.target.kind.shape(&self.target.hog),
        }
    }

    pub fn stage_schedule(&self) -> Result<StageSchedule> {
        StageSchedule::new(self.schedule.stages.clone(), self.mask.mask_size)
    }

    /// Cross-field checks; every failure is a configuration error.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        d.augment.validate()?;
        match d.format {
            DataFormat::Synthetic if d.count == 0 || d.size == 0 => {
                return Err(Error::config("synthetic data needs count > 0 and size > 0"));
            }
            DataFormat::PpmDir if d.root.as_os_str().is_empty() => {
                return Err(Error::config("data.root is required for ppm_dir data"));
            }
            _ => {}
        }
        if d.workers > 0 && d.prefetch == 0 {
            return Err(Error::config("data.prefetch must be > 0 when workers are used"));
        }
        let model = self.model_config();
        model.validate()?;
        if self.model.encoder.discard_masked && self.model.encoder.family != EncoderFamily::Isotropic {
            return Err(Error::config("discard_masked needs an isotropic encoder"));
        }
        self.target.hog.validate()?;
        let mask = self.mask.mask_config();
        mask.validate()?;
        model.check_mask_size(mask.mask_size)?;
        let stages = self.stage_schedule()?;
        for s in &stages.stages {
            self.model.encoder.check_resolution(s.resolution, s.resolution)?;
            let (r, c) = mask.grid(s.resolution, s.resolution)?;
            mask.masked_count(r * c)?;
        }
        self.optim.validate()?;
        let sch = &self.schedule;
        if !(sch.base_lr > 0.0 && sch.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be > 0, got {}", sch.base_lr)));
        }
        if sch.batch_size == 0 {
            return Err(Error::config("batch_size must be > 0"));
        }
        let total = stages.total_epochs() as f64;
        let warmup = self.warmup_epochs(&stages);
        if !(warmup >= 0.0 && warmup < total) {
            return Err(Error::config(format!("warmup of {warmup} epochs must be in [0, {total})")));
        }
        Ok(())
    }

    pub(crate) fn warmup_epochs(&self, stages: &StageSchedule) -> f64 {
        self.schedule
            .warmup_epochs
            .unwrap_or(0.05 * stages.total_epochs() as f64)
    }

    /// Opens the configured dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        crate::imageio::load_dataset(&self.data.root, self.data.format, self.data.seed, self.data.count, self.data.size)
    }

    pub fn norm_stats(&self, dataset: &Dataset) -> NormStats {
        match self.data.norm_stats {
            NormSource::Imagenet => NormStats::IMAGENET,
            NormSource::Identity => NormStats::IDENTITY,
            NormSource::Dataset => compute_norm_stats(dataset),
        }
    }
}
