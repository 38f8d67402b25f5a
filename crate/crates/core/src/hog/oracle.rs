//! Reference HOG: naive per-pixel loops in `f64`, voting by explicit circular
//! distance to every bin center. Slow; meant for checking [`super::hog_image`].

use super::HogConfig;
use crate::error::Result;
use crate::imageio::Image;

fn pixel(img: &Image, c: usize, y: isize, x: isize) -> f64 {
    let h = img.height() as isize;
    let w = img.width() as isize;
    let y = y.clamp(0, h - 1) as usize;
    let x = x.clamp(0, w - 1) as usize;
    img.plane(c)[y * img.width() + x] as f64
}

/// Same layout and definition as [`super::hog_image`].
pub fn hog_oracle(img: &Image, cfg: &HogConfig) -> Result<Vec<f64>> {
    let (h, w) = (img.height(), img.width());
    cfg.check_image(h, w)?;
    let (hc, wc) = (h / cfg.cell, w / cfg.cell);
    let bins = cfg.bins;
    let width = 180.0 / bins as f64;
    let dim = cfg.cell_dim();
    let mut out = vec![0.0f64; hc * wc * dim];

    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let mut grads = [(0.0, 0.0); 3];
            for (c, g) in grads.iter_mut().enumerate() {
                let gx = pixel(img, c, yi, xi + 1) - pixel(img, c, yi, xi - 1);
                let gy = pixel(img, c, yi + 1, xi) - pixel(img, c, yi - 1, xi);
                let magnitude = (gx * gx + gy * gy).sqrt();
                let mut theta = gy.atan2(gx).to_degrees();
                while theta < 0.0 {
                    theta += 180.0;
                }
                while theta >= 180.0 {
                    theta -= 180.0;
                }
                *g = (theta, magnitude);
            }
            let voters: Vec<(usize, (f64, f64))> = if cfg.per_channel {
                grads.iter().copied().enumerate().collect()
            } else {
                let mut best = 0;
                for c in 1..3 {
                    if grads[c].1 > grads[best].1 {
                        best = c;
                    }
                }
                vec![(0, grads[best])]
            };
            let cell = (y / cfg.cell) * wc + x / cfg.cell;
            for (slot, (theta, magnitude)) in voters {
                for b in 0..bins {
                    let center = b as f64 * width;
                    let d = (theta - center).abs();
                    let d = d.min(180.0 - d);
                    let weight = (1.0 - d / width).max(0.0);
                    out[cell * dim + slot * bins + b] += magnitude * weight;
                }
            }
        }
    }

    for hist in out.chunks_mut(bins) {
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in hist.iter_mut() {
            *v /= norm + cfg.norm_eps;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_zero() {
        let img = Image::new(8, 8, vec![0.9; 192]).unwrap();
        assert!(hog_oracle(&img, &HogConfig::default()).unwrap().iter().all(|v| *v == 0.0));
    }
}
