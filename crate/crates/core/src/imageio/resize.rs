use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
    /// Box filter weighted by pixel overlap; antialiased when shrinking.
    Area,
}

/// Source rectangle in pixel units (may be fractional).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl Region {
    pub fn full(img: &Image) -> Self {
        Region {
            top: 0.0,
            left: 0.0,
            height: img.height() as f64,
            width: img.width() as f64,
        }
    }
}

/// Source taps along one axis for every output sample: `(index, weight)`.
fn taps(out: usize, start: f64, extent: f64, src: usize, method: ResizeMethod) -> Vec<Vec<(usize, f32)>> {
    let scale = extent / out as f64;
    let max = (src - 1) as f64;
    (0..out)
        .map(|i| match method {
            ResizeMethod::Nearest => {
                let n = (start + (i as f64 + 0.5) * scale).floor().clamp(0.0, max) as usize;
                vec![(n, 1.0)]
            }
            ResizeMethod::Bilinear => {
                // half-pixel centers
                let x = (start + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
                let lo = x.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                let w = (x - lo as f64) as f32;
                if w == 0.0 {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - w), (hi, w)]
                }
            }
            ResizeMethod::Area => {
                let a = (start + i as f64 * scale).clamp(0.0, src as f64);
                let b = (start + (i + 1) as f64 * scale).clamp(0.0, src as f64);
                if b <= a {
                    let n = a.floor().min(max) as usize;
                    return vec![(n, 1.0)];
                }
                let mut v = Vec::new();
                let mut p = a.floor() as usize;
                while (p as f64) < b && p < src {
                    let overlap = (b.min(p as f64 + 1.0) - a.max(p as f64)).max(0.0);
                    if overlap > 0.0 {
                        v.push((p, (overlap / (b - a)) as f32));
                    }
                    p += 1;
                }
                v
            }
        })
        .collect()
}

/// Separable resample of `region` to `height x width`.
pub fn resize_region(img: &Image, region: Region, height: usize, width: usize, method: ResizeMethod) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!("resize target must be at least 1x1, got {height}x{width}")));
    }
    let (sh, sw) = (img.height(), img.width());
    let ys = taps(height, region.top, region.height, sh, method);
    let xs = taps(width, region.left, region.width, sw, method);
    let src = img.data();
    let mut out = vec![0.0f32; 3 * height * width];
    let mut row = vec![0.0f32; sw];
    for c in 0..3 {
        let plane = &src[c * sh * sw..(c + 1) * sh * sw];
        let dst = &mut out[c * height * width..(c + 1) * height * width];
        for (oy, ty) in ys.iter().enumerate() {
            row.iter_mut().for_each(|r| *r = 0.0);
            for &(y, wy) in ty {
                for (r, &a) in row.iter_mut().zip(&plane[y * sw..(y + 1) * sw]) {
                    *r += a * wy;
                }
            }
            let drow = &mut dst[oy * width..(oy + 1) * width];
            for (d, tx) in drow.iter_mut().zip(&xs) {
                *d = tx.iter().map(|&(x, wx)| row[x] * wx).sum();
            }
        }
    }
    Image::new(width, height, out)
}

pub fn resize(img: &Image, height: usize, width: usize, method: ResizeMethod) -> Result<Image> {
    resize_region(img, Region::full(img), height, width, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        let data = (0..3 * w * h).map(|i| (i % 17) as f32 / 17.0).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let img = ramp(7, 5);
        for m in [ResizeMethod::Bilinear, ResizeMethod::Nearest, ResizeMethod::Area] {
            let out = resize(&img, 5, 7, m).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::new(9, 6, vec![0.37; 3 * 54]).unwrap();
        let out = resize(&img, 4, 13, ResizeMethod::Bilinear).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_averages() {
        let plane = [0.0f32, 1.0, 1.0, 0.0];
        let data = plane.iter().chain(&plane).chain(&plane).copied().collect();
        let img = Image::new(2, 2, data).unwrap();
        let out = resize(&img, 1, 1, ResizeMethod::Bilinear).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let data = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let img = Image::new(2, 1, data).unwrap();
        let out = resize(&img, 1, 4, ResizeMethod::Nearest).unwrap();
        assert_eq!(&out.data()[..4], &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn area_preserves_mean_on_fractional_shrink() {
        let img = ramp(7, 7);
        let out = resize(&img, 4, 4, ResizeMethod::Area).unwrap();
        let mean = |d: &[f32]| d.iter().map(|v| *v as f64).sum::<f64>() / d.len() as f64;
        assert!((mean(img.data()) - mean(out.data())).abs() < 1e-5);
        let same = resize(&img, 7, 7, ResizeMethod::Area).unwrap();
        assert_eq!(same.data(), img.data());
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize(&ramp(2, 2), 0, 1, ResizeMethod::Bilinear).is_err());
    }
}
