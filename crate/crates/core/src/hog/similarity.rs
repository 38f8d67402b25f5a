use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Side of the uniform SSIM window (clipped to the plane size).
pub const SSIM_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Psnr,
    Ssim,
}

/// Peak signal-to-noise ratio in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &[f64], b: &[f64], data_range: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (data_range * data_range / mse).log10()
}

/// Mean SSIM over planar `[channels, h, w]` data, sliding an 8x8 uniform
/// window with stride 1 over each plane.
pub fn ssim(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize, data_range: f64) -> f64 {
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let (kh, kw) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let inv = 1.0 / (kh * kw) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let pa = &a[c * h * w..(c + 1) * h * w];
        let pb = &b[c * h * w..(c + 1) * h * w];
        for y0 in 0..=h - kh {
            for x0 in 0..=w - kw {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + kh {
                    for x in x0..x0 + kw {
                        let (u, v) = (pa[y * w + x], pb[y * w + x]);
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa * inv, sb * inv);
                let va = (saa * inv - ma * ma).max(0.0);
                let vb = (sbb * inv - mb * mb).max(0.0);
                let cov = sab * inv - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Compares two same-shaped tensors laid out as `[.., H, W]` (leading axes
/// are treated as channels) with the given dynamic range.
pub fn similarity_report<F: Element>(a: &Tensor<F>, b: &Tensor<F>, kind: Similarity, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "similarity",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.rank() < 2 || a.numel() == 0 {
        return Err(Error::dim("similarity", format!("need [.., H, W], got {:?}", a.shape())));
    }
    if !(data_range > 0.0) {
        return Err(Error::config(format!("data range must be > 0, got {data_range}")));
    }
    let s = a.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let channels = a.numel() / (h * w);
    let da: Vec<f64> = a.data().iter().map(|v| v.f64()).collect();
    let db: Vec<f64> = b.data().iter().map(|v| v.f64()).collect();
    Ok(match kind {
        Similarity::Psnr => psnr(&da, &db, data_range),
        Similarity::Ssim => ssim(&da, &db, channels, h, w, data_range),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let v: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let a = t(&[3, 16, 16], v);
        assert_eq!(similarity_report(&a, &a, Similarity::Psnr, 1.0).unwrap(), f64::INFINITY);
        let s = similarity_report(&a, &a, Similarity::Ssim, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_formula() {
        // alternating +/-0.1 noise: mse = 0.01
        let a: Vec<f64> = (0..64).map(|i| (i as f64) / 64.0).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let p = similarity_report(&t(&[8, 8], a), &t(&[8, 8], b), Similarity::Psnr, 1.0).unwrap();
        assert!((p - 10.0 * (1.0f64 / 0.01).log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a: Vec<f64> = (0..256).map(|i| ((i % 16) as f64) / 15.0).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + if (i * 7) % 3 == 0 { 0.3 } else { -0.2 }).collect();
        let s = similarity_report(&t(&[16, 16], a), &t(&[16, 16], b), Similarity::Ssim, 1.0).unwrap();
        assert!(s < 0.9 && s > -1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(similarity_report(&t(&[4, 4], vec![0.0; 16]), &t(&[2, 8], vec![0.0; 16]), Similarity::Ssim, 1.0).is_err());
    }
}
