use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ppm::read_ppm;
use super::synthetic::synthetic_image;
use super::Image;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// A directory of `.ppm` files, or a manifest file listing one path per line.
    PpmDir,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Image>,
    sources: Vec<String>,
}

impl Dataset {
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("dataset must contain at least one image"));
        }
        let sources = (0..images.len()).map(|i| format!("memory:{i}")).collect();
        Ok(Dataset { images, sources })
    }

    /// `count` synthetic images of `size x size`, fully determined by `seed`.
    pub fn synthetic(seed: u64, count: usize, size: usize) -> Result<Self> {
        if count == 0 || size == 0 {
            return Err(Error::config(format!("synthetic dataset needs count > 0 and size > 0 (got {count}, {size})")));
        }
        let images = (0..count as u64).map(|i| synthetic_image(seed, i, size)).collect();
        let sources = (0..count).map(|i| format!("synthetic:{seed}:{i}")).collect();
        Ok(Dataset { images, sources })
    }

    /// Reads every PPM under `root` (sorted by file name), or the paths listed
    /// in `root` when it is a manifest file.
    pub fn ppm_dir(root: &Path) -> Result<Self> {
        let ingest = |reason: String| Error::Ingestion {
            path: root.to_path_buf(),
            reason,
        };
        let paths: Vec<PathBuf> = if root.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(root)
                .map_err(|e| ingest(e.to_string()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
                .collect();
            paths.sort();
            paths
        } else if root.is_file() {
            let text = fs::read_to_string(root).map_err(|e| ingest(e.to_string()))?;
            let base = root.parent().unwrap_or(Path::new("."));
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| {
                    let p = PathBuf::from(l);
                    if p.is_absolute() { p } else { base.join(p) }
                })
                .collect()
        } else {
            return Err(ingest("no such file or directory".into()));
        };
        if paths.is_empty() {
            return Err(ingest("no PPM images found".into()));
        }
        let images = paths.iter().map(|p| read_ppm(p)).collect::<Result<Vec<_>>>()?;
        let sources = paths.iter().map(|p| p.display().to_string()).collect();
        Ok(Dataset { images, sources })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, index: usize) -> &Image {
        &self.images[index]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn source(&self, index: usize) -> &str {
        &self.sources[index]
    }

    /// Deterministic permutation of sample indices for one epoch.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0x65706f6368, epoch]));
        order
    }
}

/// Opens a dataset. `synthetic` uses `seed`, `count` and `size`; `ppm_dir`
/// reads from `root`.
pub fn load_dataset(root: &Path, format: DataFormat, seed: u64, count: usize, size: usize) -> Result<Dataset> {
    match format {
        DataFormat::PpmDir => Dataset::ppm_dir(root),
        DataFormat::Synthetic => Dataset::synthetic(seed, count, size),
    }
}
