//! Deterministic textured images: oriented gratings (pure sinusoids or
//! band-limited square waves built from odd sinusoidal harmonics) plus
//! hard-edged disc blobs over a colored base. A scene is a continuous function
//! of the normalized coordinate, sampled at pixel centers; rendering at a given
//! size drops harmonics above 0.8 of that size's Nyquist frequency and gives
//! disc edges a one-pixel transition, so the same scene can be photographed at
//! any resolution without aliasing.

use std::f64::consts::PI;

use rand::Rng;

use super::Image;
use crate::rng;

/// Fraction of the Nyquist frequency a rendering keeps.
const BAND_LIMIT: f64 = 0.8;

#[derive(Debug, Clone)]
struct Grating {
    cos: f64,
    sin: f64,
    /// fundamental, cycles per image side
    freq: f64,
    phase: f64,
    amp: f64,
    square: bool,
    color: [f64; 3],
}

#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    amp: f64,
    color: [f64; 3],
}

/// Parameters of one synthetic image.
#[derive(Debug, Clone)]
pub struct Scene {
    base: [f64; 3],
    gratings: Vec<Grating>,
    blobs: Vec<Blob>,
}

impl Scene {
    pub fn sample(seed: u64, index: u64) -> Self {
        let mut rng = rng::stream(seed, &[0x73796e, index]);
        let color = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
            [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
        };
        let base = color(&mut rng, 0.3, 0.7);
        let n_gratings = rng.random_range(2..=4);
        let gratings = (0..n_gratings)
            .map(|_| {
                let theta = rng.random_range(0.0..PI);
                Grating {
                    cos: theta.cos(),
                    sin: theta.sin(),
                    freq: rng.random_range(3.0f64.ln()..24.0f64.ln()).exp(),
                    phase: rng.random_range(0.0..2.0 * PI),
                    amp: rng.random_range(0.05..0.15),
                    square: rng.random_bool(0.5),
                    color: color(&mut rng, 0.4, 1.0),
                }
            })
            .collect();
        let n_blobs = rng.random_range(2..=5);
        let blobs = (0..n_blobs)
            .map(|_| Blob {
                cx: rng.random_range(0.0..1.0),
                cy: rng.random_range(0.0..1.0),
                radius: rng.random_range(0.06..0.25),
                amp: rng.random_range(-0.35..0.35),
                color: color(&mut rng, 0.3, 1.0),
            })
            .collect();
        Scene { base, gratings, blobs }
    }

    /// Value at normalized coordinate `(u, v)` as seen by a `size`-pixel
    /// sensor.
    pub fn value(&self, u: f64, v: f64, channel: usize, size: usize) -> f64 {
        let max_freq = BAND_LIMIT * size as f64 / 2.0;
        let edge = 1.0 / size as f64;
        let mut x = self.base[channel];
        for g in &self.gratings {
            let t = 2.0 * PI * (u * g.cos + v * g.sin) + g.phase / g.freq;
            let mut wave = 0.0;
            if g.square {
                let mut k = 1.0;
                while k * g.freq <= max_freq {
                    wave += (k * g.freq * t).sin() / k;
                    k += 2.0;
                }
                wave *= 4.0 / PI;
            } else if g.freq <= max_freq {
                wave = (g.freq * t).sin();
            }
            x += g.amp * g.color[channel] * wave;
        }
        for b in &self.blobs {
            let d = ((u - b.cx).powi(2) + (v - b.cy).powi(2)).sqrt();
            let inside = 1.0 / (1.0 + (-(b.radius - d) * 4.0 / edge).exp());
            x += b.amp * b.color[channel] * inside;
        }
        x.clamp(0.0, 1.0)
    }

    pub fn render(&self, size: usize) -> Image {
        let n = size * size;
        let mut data = vec![0.0f32; 3 * n];
        let inv = 1.0 / size as f64;
        for y in 0..size {
            let v = (y as f64 + 0.5) * inv;
            for x in 0..size {
                let u = (x as f64 + 0.5) * inv;
                for c in 0..3 {
                    data[c * n + y * size + x] = self.value(u, v, c, size) as f32;
                }
            }
        }
        Image::new(size, size, data).expect("square buffer")
    }
}

pub fn synthetic_image(seed: u64, index: u64, size: usize) -> Image {
    Scene::sample(seed, index).render(size)
}
