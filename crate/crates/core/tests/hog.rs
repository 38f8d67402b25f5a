use fastmim::hog::oracle::hog_oracle;
use fastmim::hog::{hog_extract, hog_image, HogConfig};
use fastmim::imageio::{Image, ImageBatch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let data = (0..3 * size * size).map(|_| rng.random::<f32>()).collect();
    Image::new(size, size, data).unwrap()
}

/// Multiples of 1/256 so that adding a dyadic constant is exact.
fn dyadic_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let data = (0..3 * size * size).map(|_| rng.random_range(0..256) as f32 / 256.0).collect();
    Image::new(size, size, data).unwrap()
}

fn map_pixels(img: &Image, f: impl Fn(usize, usize, usize) -> f32) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0.0; 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[c * w * h + y * w + x] = f(c, y, x);
            }
        }
    }
    Image::new(w, h, data).unwrap()
}

#[test]
fn extract_matches_oracle_on_random_images() {
    let cfg = HogConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let img = random_image(&mut rng, 32);
        let fast = hog_image(&img, &cfg).unwrap();
        let slow = hog_oracle(&img, &cfg).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn batch_extract_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let imgs = vec![random_image(&mut rng, 32), random_image(&mut rng, 32)];
    let batch = ImageBatch::<f32>::from_images(&imgs, vec![0, 1]).unwrap();
    let field = hog_extract(&batch, &HogConfig::default()).unwrap();
    assert_eq!(field.data.shape(), &[2, 4, 4, 27]);
    let second = hog_image(&imgs[1], &HogConfig::default()).unwrap();
    assert_eq!(&field.data.data()[4 * 4 * 27..], &second[..]);
}

#[test]
fn brightness_shift_is_exact() {
    let cfg = HogConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let img = dyadic_image(&mut rng, 32);
        let shifted = map_pixels(&img, |c, y, x| img.plane(c)[y * 32 + x] + 0.375);
        assert_eq!(hog_image(&img, &cfg).unwrap(), hog_image(&shifted, &cfg).unwrap());
    }
}

#[test]
fn contrast_scale_is_near_invariant() {
    let cfg = HogConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for a in [0.3f32, 0.7, 2.5] {
        let img = random_image(&mut rng, 32);
        let scaled = map_pixels(&img, |c, y, x| a * img.plane(c)[y * 32 + x]);
        let h0 = hog_image(&img, &cfg).unwrap();
        let h1 = hog_image(&scaled, &cfg).unwrap();
        for (u, v) in h0.iter().zip(&h1) {
            assert!((u - v).abs() < 1e-4, "a={a}: {u} vs {v}");
        }
    }
}

fn cell_hist(field: &[f64], cells: usize, cy: usize, cx: usize, c: usize, bins: usize) -> &[f64] {
    &field[(cy * cells + cx) * 3 * bins + c * bins..][..bins]
}

#[test]
fn horizontal_flip_reflects_bins() {
    let cfg = HogConfig::default();
    let bins = cfg.bins;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 32);
    let flipped = map_pixels(&img, |c, y, x| img.plane(c)[y * 32 + (31 - x)]);
    let a = hog_oracle(&img, &cfg).unwrap();
    let b = hog_oracle(&flipped, &cfg).unwrap();
    let cells = 4;
    for cy in 1..cells - 1 {
        for cx in 1..cells - 1 {
            for c in 0..3 {
                let orig = cell_hist(&a, cells, cy, cx, c, bins);
                let refl = cell_hist(&b, cells, cy, cells - 1 - cx, c, bins);
                for k in 0..bins {
                    let mirrored = (bins - k) % bins;
                    assert!((orig[k] - refl[mirrored]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn quarter_turn_shifts_bins_by_half() {
    let cfg = HogConfig { bins: 8, ..HogConfig::default() };
    let bins = cfg.bins;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random_image(&mut rng, 32);
    // counter-clockwise: R(y, x) = I(x, N - 1 - y)
    let rotated = map_pixels(&img, |c, y, x| img.plane(c)[x * 32 + (31 - y)]);
    let a = hog_oracle(&img, &cfg).unwrap();
    let b = hog_oracle(&rotated, &cfg).unwrap();
    let fast = hog_image(&rotated, &cfg).unwrap();
    let cells = 4;
    for cy in 1..cells - 1 {
        for cx in 1..cells - 1 {
            for c in 0..3 {
                let rot = cell_hist(&b, cells, cy, cx, c, bins);
                let orig = cell_hist(&a, cells, cx, cells - 1 - cy, c, bins);
                for k in 0..bins {
                    assert!((rot[k] - orig[(k + bins / 2) % bins]).abs() < 1e-9, "cell {cy},{cx} bin {k}");
                    let f = fast[(cy * cells + cx) * 3 * bins + c * bins + k] as f64;
                    assert!((f - rot[k]).abs() < 1e-5);
                }
            }
        }
    }
}

/// Soft step across the line through the center at `deg` degrees.
fn oriented_edge(size: usize, deg: f64) -> Image {
    let (s, c) = deg.to_radians().sin_cos();
    let half = size as f64 / 2.0;
    let plane: Vec<f32> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 + 0.5 - half, (i % size) as f64 + 0.5 - half);
            // smooth profile across the normal, same scene at any size
            (0.5 + 0.5 * ((x * c + y * s) * 16.0 / size as f64).tanh()) as f32
        })
        .collect();
    let data = plane.iter().chain(&plane).chain(&plane).copied().collect();
    Image::new(size, size, data).unwrap()
}

fn argmax(v: &[f32]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn edge_orientation_survives_rescaling() {
    // cells covering the same area at two scales peak in the same bin (angles
    // sit on bin centers)
    let small_cfg = HogConfig::default();
    let large_cfg = HogConfig { cell: 16, ..small_cfg };
    for deg in [20.0, 40.0, 80.0, 120.0, 160.0] {
        let a = hog_image(&oriented_edge(64, deg), &small_cfg).unwrap();
        let b = hog_image(&oriented_edge(128, deg), &large_cfg).unwrap();
        let (sn, cs) = f64::to_radians(deg).sin_cos();
        let mut compared = 0;
        for cell in 0..64 {
            // cell center in side units relative to the image center
            let (y, x) = ((cell / 8) as f64 / 8.0 - 0.4375, (cell % 8) as f64 / 8.0 - 0.4375);
            if (x * cs + y * sn).abs() > 0.1 {
                continue;
            }
            let (ha, hb) = (&a[cell * 27..][..9], &b[cell * 27..][..9]);
            assert_eq!(argmax(ha), (deg / 20.0) as usize, "{deg} deg, cell {cell}");
            assert_eq!(argmax(hb), (deg / 20.0) as usize, "{deg} deg, cell {cell}");
            compared += 1;
        }
        assert!(compared >= 6, "{deg} deg: only {compared} edge cells");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cells_are_nonnegative_and_bounded(seed in any::<u64>(), cells in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, cells * 8);
        let cfg = HogConfig::default();
        let field = hog_image(&img, &cfg).unwrap();
        prop_assert!(field.iter().all(|v| *v >= 0.0));
        for hist in field.chunks(cfg.bins) {
            let n = hist.iter().map(|v| v * v).sum::<f32>().sqrt();
            prop_assert!(n <= 1.0 + 1e-5);
        }
    }
}
