use rand::Rng;
use serde::{Deserialize, Serialize};

use super::resize::{resize_region, Region, ResizeMethod};
use super::Image;
use crate::error::{Error, Result};
use crate::rng;

/// Random-resized-crop and horizontal-flip parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the source area.
    pub scale: (f64, f64),
    /// Crop aspect ratio (width / height) range.
    pub ratio: (f64, f64),
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale: (0.2, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!("crop scale range {:?} must satisfy 0 < lo <= hi <= 1", self.scale)));
        }
        if !(0.0 < self.ratio.0 && self.ratio.0 <= self.ratio.1) {
            return Err(Error::config(format!("crop ratio range {:?} is invalid", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config(format!("flip probability {} not in [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// What the augmentation did to one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropInfo {
    /// Drawn target area fraction (1.0 for the full-image fallback).
    pub scale: f64,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub flipped: bool,
    pub fallback: bool,
}

pub const MIN_RES: usize = 32;
pub const MAX_RES: usize = 1024;

/// Random resized crop to `out_res x out_res` followed by a random horizontal
/// flip. Deterministic in `seed`. When no valid crop is found in ten draws the
/// whole image is resized instead.
pub fn augment(img: &Image, out_res: usize, seed: u64, cfg: &AugmentConfig) -> Result<(Image, CropInfo)> {
    if !(MIN_RES..=MAX_RES).contains(&out_res) {
        return Err(Error::config(format!("output resolution {out_res} outside {MIN_RES}..={MAX_RES}")));
    }
    let mut rng = rng::stream(seed, &[0x617567]);
    let (w, h) = (img.width(), img.height());
    let area = (w * h) as f64;
    let (log_lo, log_hi) = (cfg.ratio.0.ln(), cfg.ratio.1.ln());

    let mut info = CropInfo {
        scale: 1.0,
        top: 0,
        left: 0,
        height: h,
        width: w,
        flipped: false,
        fallback: true,
    };
    for _ in 0..10 {
        let scale = if cfg.scale.0 < cfg.scale.1 {
            rng.random_range(cfg.scale.0..cfg.scale.1)
        } else {
            cfg.scale.0
        };
        let aspect = if log_lo < log_hi {
            rng.random_range(log_lo..log_hi).exp()
        } else {
            log_lo.exp()
        };
        let target = area * scale;
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            info = CropInfo {
                scale,
                top,
                left,
                height: ch,
                width: cw,
                flipped: false,
                fallback: false,
            };
            break;
        }
    }
    info.flipped = rng.random_bool(cfg.flip_prob);

    let region = Region {
        top: info.top as f64,
        left: info.left as f64,
        height: info.height as f64,
        width: info.width as f64,
    };
    let mut out = resize_region(img, region, out_res, out_res, ResizeMethod::Bilinear)?;
    if info.flipped {
        out.flip_horizontal();
    }
    Ok((out, info))
}
