//! Image ingestion, resizing, datasets and the pre-training augmentation.

mod augment;
mod dataset;
pub mod ppm;
mod resize;
pub mod synthetic;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig, CropInfo, MAX_RES, MIN_RES};
pub use dataset::{load_dataset, DataFormat, Dataset};
pub use resize::{resize, resize_region, Region, ResizeMethod};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// RGB image in planar layout (`3 x H x W`), values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::dim(
                "image",
                format!("{width}x{height} RGB needs {} values, got {}", 3 * width * height, data.len()),
            ));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn flip_horizontal(&mut self) {
        let w = self.width;
        for row in self.data.chunks_mut(w) {
            row.reverse();
        }
    }

    pub fn to_tensor<F: Element>(&self) -> Tensor<F> {
        let data = self.data.iter().map(|&v| F::of(v as f64)).collect();
        Tensor::from_vec(&[3, self.height, self.width], data).expect("sized on construction")
    }

    /// Inverse of [`Image::to_tensor`] for `3 x H x W` tensors.
    pub fn from_tensor<F: Element>(t: &Tensor<F>) -> Result<Self> {
        match t.shape() {
            &[3, h, w] => Image::new(w, h, t.data().iter().map(|v| v.f64() as f32).collect()),
            s => Err(Error::dim("image", format!("expected [3, H, W], got {s:?}"))),
        }
    }
}

/// Stacked images `B x 3 x H x W` plus their dataset indices.
#[derive(Debug, Clone)]
pub struct ImageBatch<F: Element = f32> {
    pub data: Tensor<F>,
    pub source_ids: Vec<usize>,
    /// (height, width) in pixels.
    pub resolution: (usize, usize),
}

impl<F: Element> ImageBatch<F> {
    pub fn from_images(images: &[Image], source_ids: Vec<usize>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::dim("batch", "empty batch"))?;
        let (h, w) = (first.height, first.width);
        if source_ids.len() != images.len() {
            return Err(Error::dim("batch", "one source id per image required"));
        }
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::dim(
                    "batch",
                    format!("mixed resolutions {}x{} and {h}x{w}", img.height, img.width),
                ));
            }
            data.extend(img.data.iter().map(|&v| F::of(v as f64)));
        }
        let data = Tensor::from_vec(&[images.len(), 3, h, w], data)?;
        Ok(ImageBatch {
            data,
            source_ids,
            resolution: (h, w),
        })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `i` as an image.
    pub fn image(&self, i: usize) -> Image {
        let (h, w) = self.resolution;
        let n = 3 * h * w;
        let d = self.data.data();
        Image::new(w, h, d[i * n..(i + 1) * n].iter().map(|v| v.f64() as f32).collect()).expect("batch layout")
    }
}

/// Per-channel dataset statistics used to normalize inputs and pixel targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub const IMAGENET: NormStats = NormStats {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config(format!("normalization stats invalid: {self:?}")));
        }
        Ok(())
    }

    fn channel_tensors<F: Element>(&self) -> (Tensor<F>, Tensor<F>) {
        let mean = self.mean.iter().map(|&m| F::of(m)).collect();
        let inv = self.std.iter().map(|&s| F::of(1.0 / s)).collect();
        (
            Tensor::from_vec(&[3, 1, 1], mean).unwrap(),
            Tensor::from_vec(&[3, 1, 1], inv).unwrap(),
        )
    }
}

/// `(x - mean_c) / std_c` for a `[.., 3, H, W]` tensor.
pub fn normalize<F: Element>(x: &Tensor<F>, stats: &NormStats) -> Result<Tensor<F>> {
    stats.validate()?;
    let (mean, inv) = stats.channel_tensors::<F>();
    x.sub(&mean)?.mul(&inv)
}

pub fn denormalize<F: Element>(x: &Tensor<F>, stats: &NormStats) -> Result<Tensor<F>> {
    stats.validate()?;
    let std = Tensor::from_vec(&[3, 1, 1], stats.std.iter().map(|&s| F::of(s)).collect())?;
    let mean = Tensor::from_vec(&[3, 1, 1], stats.mean.iter().map(|&m| F::of(m)).collect())?;
    x.mul(&std)?.add(&mean)
}

/// Exact two-pass per-channel mean and standard deviation over every pixel.
pub fn compute_norm_stats(dataset: &Dataset) -> NormStats {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in dataset.images() {
        for (c, s) in sum.iter_mut().enumerate() {
            *s += img.plane(c).iter().map(|&v| v as f64).sum::<f64>();
        }
        count += img.width * img.height;
    }
    let mean = sum.map(|s| s / count as f64);
    let mut sq = [0.0f64; 3];
    for img in dataset.images() {
        for (c, s) in sq.iter_mut().enumerate() {
            *s += img.plane(c).iter().map(|&v| (v as f64 - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let mut std = sq.map(|s| (s / count as f64).sqrt());
    for (c, s) in std.iter_mut().enumerate() {
        if *s < STD_FLOOR {
            log::warn!("channel {c} has std {s:.3e}; clipping to {STD_FLOOR:e}");
            *s = STD_FLOOR;
        }
    }
    NormStats { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_dataset_stats() {
        let img = Image::new(4, 4, vec![0.25; 48]).unwrap();
        let stats = compute_norm_stats(&Dataset::from_images(vec![img]).unwrap());
        assert_eq!(stats.mean, [0.25; 3]);
        assert_eq!(stats.std, [STD_FLOOR; 3]);
    }

    #[test]
    fn hand_computed_stats() {
        // channel 0: [0, 1], channel 1: [0.5, 0.5], channel 2: [0.2, 0.6]
        let img = Image::new(2, 1, vec![0.0, 1.0, 0.5, 0.5, 0.2, 0.6]).unwrap();
        let stats = compute_norm_stats(&Dataset::from_images(vec![img]).unwrap());
        let direct_mean = [0.5, 0.5, 0.4];
        let direct_std = [0.5, STD_FLOOR, 0.2];
        for c in 0..3 {
            assert!((stats.mean[c] - direct_mean[c]).abs() < 1e-7);
            assert!((stats.std[c] - direct_std[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn normalize_cases() {
        let stats = NormStats {
            mean: [0.1, 0.2, 0.3],
            std: [0.5, 0.25, 2.0],
        };
        let x = Tensor::<f32>::from_vec(&[1, 3, 1, 2], vec![0.1, 0.1, 0.2, 0.2, 0.3, 0.3]).unwrap();
        assert!(normalize(&x, &stats).unwrap().to_vec().iter().all(|v| v.abs() < 1e-7));

        let y = Tensor::<f32>::from_vec(&[1, 3, 1, 2], vec![0.9, 0.0, 0.7, 0.3, 1.0, 0.05]).unwrap();
        let id = normalize(&y, &NormStats::IDENTITY).unwrap();
        assert_eq!(id.to_vec(), y.to_vec());
        let rt = denormalize(&normalize(&y, &stats).unwrap(), &stats).unwrap();
        for (a, b) in rt.to_vec().iter().zip(y.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(normalize(&y, &NormStats { mean: [0.0; 3], std: [1.0, 0.0, 1.0] }).is_err());
    }

    #[test]
    fn normalized_dataset_is_standard() {
        let ds = Dataset::synthetic(11, 8, 24).unwrap();
        let stats = compute_norm_stats(&ds);
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in ds.images() {
            let t = normalize(&img.to_tensor::<f64>(), &stats).unwrap();
            let d = t.data();
            let hw = img.width() * img.height();
            for c in 0..3 {
                for v in &d[c * hw..(c + 1) * hw] {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += hw;
        }
        for c in 0..3 {
            let mu = sum[c] / n as f64;
            let sigma = (sq[c] / n as f64 - mu * mu).sqrt();
            assert!(mu.abs() < 1e-4, "mean {mu}");
            assert!((sigma - 1.0).abs() < 1e-3, "std {sigma}");
        }
    }
}
