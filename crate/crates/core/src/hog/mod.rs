//! Histograms of oriented gradients as reconstruction targets.
//!
//! Per channel: centered `[-1, 0, 1]` differences with replicate padding,
//! unsigned orientation in `[0, 180)`, magnitude-weighted linear voting into
//! the two nearest bin centers (`i * 180 / bins`, wrapping at 180), summed per
//! square cell and L2-normalized per cell and channel. The cell layout is
//! `[cells_y, cells_x, channels * bins]` with channels outermost in a cell.

mod dump;
pub mod oracle;
mod similarity;

use serde::{Deserialize, Serialize};

pub use dump::{HOG_MAGIC, HOG_VERSION};
pub use similarity::{psnr, similarity_report, ssim, Similarity, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::imageio::{Image, ImageBatch};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogConfig {
    pub bins: usize,
    /// Cell side in pixels.
    pub cell: usize,
    pub unsigned_orientation: bool,
    pub norm_eps: f64,
    /// One histogram per RGB channel (concatenated); otherwise one histogram
    /// from the strongest channel at each pixel.
    pub per_channel: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            bins: 9,
            cell: 8,
            unsigned_orientation: true,
            norm_eps: 1e-6,
            per_channel: true,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config(format!("hog bins must be >= 2, got {}", self.bins)));
        }
        if self.cell == 0 {
            return Err(Error::config("hog cell must be > 0"));
        }
        if !self.unsigned_orientation {
            return Err(Error::config("signed-orientation HOG is not supported"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config(format!("hog norm_eps must be > 0, got {}", self.norm_eps)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        if self.per_channel {
            3
        } else {
            1
        }
    }

    /// Values per cell.
    pub fn cell_dim(&self) -> usize {
        self.bins * self.channels()
    }

    pub fn check_image(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if height % self.cell != 0 || width % self.cell != 0 {
            return Err(Error::config(format!(
                "hog cell {} does not divide image {height}x{width}",
                self.cell
            )));
        }
        Ok(())
    }

    pub(crate) fn bin_width(&self) -> f64 {
        180.0 / self.bins as f64
    }
}

/// HOG descriptors for a batch: `[B, H / cell, W / cell, channels * bins]`.
#[derive(Debug, Clone)]
pub struct HogField {
    pub data: Tensor<f32>,
    pub config: HogConfig,
}

impl HogField {
    pub fn cells(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }

    /// Sample `i` rearranged to planar `[channels * bins, cells_y, cells_x]`.
    pub fn planar(&self, i: usize) -> Vec<f32> {
        let s = self.data.shape();
        let (hc, wc, d) = (s[1], s[2], s[3]);
        let data = self.data.data();
        let sample = &data[i * hc * wc * d..(i + 1) * hc * wc * d];
        let mut out = vec![0.0; sample.len()];
        for cell in 0..hc * wc {
            for f in 0..d {
                out[f * hc * wc + cell] = sample[cell * d + f];
            }
        }
        out
    }
}

/// Orientation and gradient magnitude at every pixel of one plane.
fn gradients(plane: &[f32], h: usize, w: usize, theta: &mut [f32], mag: &mut [f32]) {
    for y in 0..h {
        let up = &plane[y.saturating_sub(1) * w..][..w];
        let down = &plane[(y + 1).min(h - 1) * w..][..w];
        let row = &plane[y * w..][..w];
        for x in 0..w {
            let gx = row[(x + 1).min(w - 1)] - row[x.saturating_sub(1)];
            let gy = down[x] - up[x];
            let i = y * w + x;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let mut t = gy.atan2(gx).to_degrees();
            if t < 0.0 {
                t += 180.0;
            }
            if t >= 180.0 {
                t -= 180.0;
            }
            theta[i] = t;
        }
    }
}

/// HOG of a single image as `[cells_y * cells_x * cell_dim]`.
pub fn hog_image(img: &Image, cfg: &HogConfig) -> Result<Vec<f32>> {
    let (h, w) = (img.height(), img.width());
    cfg.check_image(h, w)?;
    let (hc, wc) = (h / cfg.cell, w / cfg.cell);
    let bins = cfg.bins;
    let dim = cfg.cell_dim();
    let inv_width = 1.0 / cfg.bin_width() as f32;
    let mut out = vec![0.0f32; hc * wc * dim];

    let mut theta = vec![vec![0.0f32; h * w]; 3];
    let mut mag = vec![vec![0.0f32; h * w]; 3];
    for c in 0..3 {
        gradients(img.plane(c), h, w, &mut theta[c], &mut mag[c]);
    }

    let vote = |slot: usize, t: f32, m: f32, out: &mut [f32]| {
        if m == 0.0 {
            return;
        }
        let pos = t * inv_width;
        let fl = pos.floor();
        let frac = pos - fl;
        let lo = (fl as usize) % bins;
        let hi = (lo + 1) % bins;
        out[slot + lo] += m * (1.0 - frac);
        out[slot + hi] += m * frac;
    };

    for y in 0..h {
        let cy = y / cfg.cell;
        for x in 0..w {
            let cell = cy * wc + x / cfg.cell;
            let i = y * w + x;
            if cfg.per_channel {
                for c in 0..3 {
                    vote(cell * dim + c * bins, theta[c][i], mag[c][i], &mut out);
                }
            } else {
                let c = (0..3).fold(0, |best, c| if mag[c][i] > mag[best][i] { c } else { best });
                vote(cell * dim, theta[c][i], mag[c][i], &mut out);
            }
        }
    }

    let eps = cfg.norm_eps as f32;
    for hist in out.chunks_mut(bins) {
        let norm = hist.iter().map(|v| v * v).sum::<f32>().sqrt();
        let inv = 1.0 / (norm + eps);
        hist.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// HOG descriptors for every image in a batch.
pub fn hog_extract<F: Element>(batch: &ImageBatch<F>, cfg: &HogConfig) -> Result<HogField> {
    let (h, w) = batch.resolution;
    cfg.check_image(h, w)?;
    let (hc, wc) = (h / cfg.cell, w / cfg.cell);
    let mut data = Vec::with_capacity(batch.len() * hc * wc * cfg.cell_dim());
    for i in 0..batch.len() {
        data.extend(hog_image(&batch.image(i), cfg)?);
    }
    Ok(HogField {
        data: Tensor::from_vec(&[batch.len(), hc, wc, cfg.cell_dim()], data)?,
        config: *cfg,
    })
}
