//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measurements and wall time; the binary exits non-zero if any
//! criterion fails or overruns its time budget.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use fastmim::bench::{cost_model, throughput_run, Regime};
use fastmim::hog::oracle::hog_oracle;
use fastmim::hog::{hog_image, ssim, HogConfig};
use fastmim::imageio::synthetic::Scene;
use fastmim::imageio::{normalize, resize, Image, ImageBatch, NormStats, ResizeMethod};
use fastmim::masking::{apply_mask, sample_mask, BlockMask, MaskConfig, MaskToken};
use fastmim::models::{Checkpoint, DecoderConfig, ModelBundle, ModelConfig, Preset};
use fastmim::objective::{extract_targets, masked_l2_loss, TargetKind};
use fastmim::tensor::gradcheck;
use fastmim::trainer::{pretrain, pretrain_progressive, Stage, StepRecord, Trainer};
use fastmim::{RunConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Training runs shared between criteria, keyed by target and resolution.
#[derive(Default)]
struct Runs(HashMap<(TargetKind, usize), Vec<StepRecord>>);

fn desk_run(kind: TargetKind, resolution: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.target.kind = kind;
    c.schedule.stages = vec![Stage { resolution, epochs: 50 }];
    c
}

fn train(c: &RunConfig) -> Vec<StepRecord> {
    let mut t = Trainer::new(c.clone(), c.dataset().unwrap()).unwrap();
    t.run(None, None).unwrap()
}

impl Runs {
    fn get(&mut self, kind: TargetKind, resolution: usize) -> &[StepRecord] {
        self.0.entry((kind, resolution)).or_insert_with(|| train(&desk_run(kind, resolution)))
    }
}

/// Mean loss over the last ten steps.
fn final_loss(r: &[StepRecord]) -> f64 {
    let tail = &r[r.len() - 10..];
    tail.iter().map(|s| s.loss).sum::<f64>() / tail.len() as f64
}

fn c1_tokens() -> Outcome {
    let (e, d) = (Preset::VitBase.encoder(), Preset::VitBase.decoder());
    let m = MaskConfig::default();
    let hi = cost_model(&e, &d, 224, &m, Regime::MimFull).map_err(|e| e.to_string())?;
    let lo = cost_model(&e, &d, 128, &m, Regime::FastmimLowres).map_err(|e| e.to_string())?;
    let reduction = lo.token_reduction_vs(&hi);
    check(
        hi.token_counts == [196] && lo.token_counts == [64] && (reduction * 1000.0).round() == 673.0 && (reduction - 0.70).abs() < 0.03,
        format!("tokens {}/{}, reduction {:.1}%", hi.token_counts[0], lo.token_counts[0], 100.0 * reduction),
    )
}

fn c2_masks() -> Outcome {
    let cfg = MaskConfig { mask_size: 32, ..Default::default() };
    let n = 10_000;
    let m = sample_mask(n, (128, 128), &cfg, 2024).map_err(|e| e.to_string())?;
    let exact = (0..n).all(|b| m.masked_count(b) == 12);
    let mut counts = [0usize; 16];
    for b in 0..n {
        for i in m.masked_indices(b) {
            counts[i] += 1;
        }
    }
    let (mean, sd) = (n as f64 * 0.75, (n as f64 * 0.75 * 0.25).sqrt());
    let worst = counts.iter().map(|&c| (c as f64 - mean).abs() / sd).fold(0.0, f64::max);
    check(exact && worst <= 3.0, format!("all samples mask 12/16: {exact}; worst block deviation {worst:.2} sigma"))
}

fn c3_mask_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for case in 0..100u64 {
        let ms = [8, 16, 32][rng.random_range(0..3)];
        let (rows, cols) = (rng.random_range(2..5), rng.random_range(2..5));
        let (h, w, b) = (rows * ms, cols * ms, rng.random_range(1..4));
        let x: Vec<f32> = (0..b * 3 * h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let images = Tensor::from_vec(&[b, 3, h, w], x.clone()).unwrap();
        let cfg = MaskConfig { mask_size: ms, ratio: rng.random_range(0.2..0.8), ..Default::default() };
        let mask = sample_mask(b, (h, w), &cfg, case).unwrap();
        let token = MaskToken::image(true);
        let tv: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        token.value.set_data(&tv).unwrap();
        let got = apply_mask(&images, &mask, &token).unwrap().to_vec();
        for bi in 0..b {
            for c in 0..3 {
                for y in 0..h {
                    for xx in 0..w {
                        let s = if mask.is_visible(bi, (y / ms) * cols + xx / ms) { 1.0f32 } else { 0.0 };
                        let i = ((bi * 3 + c) * h + y) * w + xx;
                        let want = x[i] * s + tv[c] * (1.0 - s);
                        mismatches += usize::from(got[i].to_bits() != want.to_bits());
                    }
                }
            }
        }
    }
    check(mismatches == 0, format!("{mismatches} bit mismatches over 100 cases"))
}

fn c4_hog() -> Outcome {
    let cfg = HogConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut bright_exact, mut contrast) = (0.0f64, true, 0.0f32);
    for i in 0..200 {
        let data: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.random_range(0..128) as f32 / 256.0).collect();
        let img = Image::new(32, 32, data.clone()).unwrap();
        let fast = hog_image(&img, &cfg).unwrap();
        let slow = hog_oracle(&img, &cfg).unwrap();
        worst = fast.iter().zip(&slow).map(|(a, b)| (*a as f64 - b).abs()).fold(worst, f64::max);
        if i < 50 {
            // dyadic pixels plus a dyadic offset keep every difference exact
            let shifted = Image::new(32, 32, data.iter().map(|v| v + 0.25).collect()).unwrap();
            bright_exact &= hog_image(&shifted, &cfg).unwrap() == fast;
            let scaled = Image::new(32, 32, data.iter().map(|v| v * 1.7).collect()).unwrap();
            let hs = hog_image(&scaled, &cfg).unwrap();
            contrast = hs.iter().zip(&fast).map(|(a, b)| (a - b).abs()).fold(contrast, f32::max);
        }
    }
    check(
        worst < 1e-5 && bright_exact && contrast < 1e-4,
        format!("oracle max dev {worst:.2e}; brightness exact {bright_exact}; contrast max dev {contrast:.2e}"),
    )
}

fn leaf(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut results: Vec<(String, f64)> = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&[Tensor<f64>]) -> fastmim::Result<Tensor<f64>>, rng: &mut ChaCha8Rng| {
        let probe = f(&inputs).unwrap();
        let w = Tensor::from_vec(probe.shape(), (0..probe.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let loss = || f(&inputs)?.mul(&w)?.sum();
        let r = gradcheck(&inputs, loss, usize::MAX, 0).unwrap();
        results.push((name.to_string(), r.max_rel_err));
    };
    let (a, b) = (leaf(&mut rng, &[3, 4]), leaf(&mut rng, &[4]));
    op("add", vec![a.clone(), b.clone()], &|t| t[0].add(&t[1]), &mut rng);
    op("sub", vec![a.clone(), b.clone()], &|t| t[0].sub(&t[1]), &mut rng);
    op("mul", vec![a.clone(), b.clone()], &|t| t[0].mul(&t[1]), &mut rng);
    op("scale", vec![a.clone()], &|t| t[0].scale(-1.7), &mut rng);
    op("add_scalar", vec![a.clone()], &|t| t[0].add_scalar(0.3), &mut rng);
    op("gelu", vec![leaf(&mut rng, &[2, 5])], &|t| t[0].gelu(), &mut rng);
    op("softmax", vec![leaf(&mut rng, &[3, 5])], &|t| t[0].softmax(), &mut rng);
    op("layernorm", vec![leaf(&mut rng, &[3, 6])], &|t| t[0].layernorm(1e-6), &mut rng);
    op("sum", vec![a.clone()], &|t| t[0].sum(), &mut rng);
    op("mean", vec![a.clone()], &|t| t[0].mean(), &mut rng);
    op("mse", vec![a.clone(), leaf(&mut rng, &[3, 4])], &|t| t[0].mse(&t[1]), &mut rng);
    op("matmul", vec![leaf(&mut rng, &[2, 3, 4]), leaf(&mut rng, &[4, 5])], &|t| t[0].matmul(&t[1]), &mut rng);
    op("bmm", vec![leaf(&mut rng, &[2, 3, 4]), leaf(&mut rng, &[2, 4, 2])], &|t| t[0].bmm(&t[1]), &mut rng);
    let c = leaf(&mut rng, &[2, 3, 4]);
    op("reshape", vec![c.clone()], &|t| t[0].reshape(&[6, 4]), &mut rng);
    op("permute", vec![c.clone()], &|t| t[0].permute(&[2, 0, 1]), &mut rng);
    op("transpose", vec![c.clone()], &|t| t[0].transpose(0, 2), &mut rng);
    op("slice", vec![c.clone()], &|t| t[0].slice(2, 1, 3), &mut rng);
    op("index_select", vec![c.clone()], &|t| t[0].index_select(1, &[2, 0, 2]), &mut rng);
    op("concat", vec![c.clone(), leaf(&mut rng, &[2, 1, 4])], &|t| Tensor::concat(&[t[0].clone(), t[1].clone()], 1), &mut rng);

    // tiny model: 2 encoder blocks, 1b64d decoder, HOG target, 32x32 input
    let mut encoder = Preset::VitToy.encoder();
    encoder.depth = 2;
    let hog = HogConfig::default();
    let config = ModelConfig {
        encoder,
        decoder: "1b64d".parse::<DecoderConfig>().unwrap(),
        mask_level: fastmim::masking::MaskLevel::Image,
        learnable_mask_token: true,
        target: TargetKind::Hog.shape(&hog),
    };
    let model = ModelBundle::<f64>::new(config, 11).unwrap();
    let imgs: Vec<Image> = (0..2).map(|i| Scene::sample(5, i).render(32)).collect();
    let clean = ImageBatch::<f64>::from_images(&imgs, vec![0, 1]).unwrap();
    let mask = sample_mask(2, (32, 32), &MaskConfig::default(), 5).unwrap();
    let stats = NormStats::IMAGENET;
    let target = extract_targets(&clean, &mask, TargetKind::Hog, &hog, &stats).unwrap();
    let x = normalize(&clean.data, &stats).unwrap();
    let params: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let loss = || masked_l2_loss(&model.predict(&x, &mask)?, &target);
    let r = gradcheck(&params, loss, 6, 5).map_err(|e| e.to_string())?;
    results.push(("model".into(), r.max_rel_err));

    let worst = results.iter().cloned().fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    check(
        results.iter().all(|(_, e)| *e < 1e-3),
        format!("{} ops + model ({} params probed {}x); worst {} at {:.2e}", results.len() - 1, params.len(), r.checked, worst.0, worst.1),
    )
}

fn c6_training(runs: &mut Runs) -> Outcome {
    let first = runs.get(TargetKind::Hog, 64).to_vec();
    let again = train(&desk_run(TargetKind::Hog, 64));
    let same = first.len() == again.len()
        && first
            .iter()
            .zip(&again)
            .all(|(a, b)| a.step == b.step && a.lr.to_bits() == b.lr.to_bits() && a.loss.to_bits() == b.loss.to_bits());
    let (init, fin) = (first[0].loss, final_loss(&first));
    check(
        first.len() == 200 && fin <= 0.5 * init && same,
        format!("{} steps, loss {init:.4} -> {fin:.4} (ratio {:.3}); deterministic {same}", first.len(), fin / init),
    )
}

/// Fields of one sample as planar `[features, cells_y, cells_x]`.
fn planar(field: &[f32], cells: usize, features: usize) -> Vec<f64> {
    let mut out = vec![0.0; field.len()];
    for cell in 0..cells * cells {
        for f in 0..features {
            out[f * cells * cells + cell] = field[cell * features + f] as f64;
        }
    }
    out
}

fn c7_resolution(runs: &mut Runs) -> Outcome {
    let mut wins = 0;
    let (mut hog_mean, mut pix_mean) = (0.0, 0.0);
    for i in 0..20 {
        let scene = Scene::sample(77, i);
        let (small, large) = (scene.render(128), scene.render(224));
        let h_small = hog_image(&small, &HogConfig::default()).unwrap();
        let h_large = hog_image(&large, &HogConfig { cell: 14, ..Default::default() }).unwrap();
        let hog_ssim = ssim(&planar(&h_small, 16, 27), &planar(&h_large, 16, 27), 27, 16, 16, 1.0);
        let pooled = resize(&large, 128, 128, ResizeMethod::Area).unwrap();
        let to64 = |img: &Image| img.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let pix_ssim = ssim(&to64(&small), &to64(&pooled), 3, 128, 128, 1.0);
        wins += usize::from(hog_ssim > pix_ssim);
        hog_mean += hog_ssim / 20.0;
        pix_mean += pix_ssim / 20.0;
    }
    let gap = |a: f64, b: f64| (a - b).abs() / (0.5 * (a + b));
    let h64 = final_loss(runs.get(TargetKind::Hog, 64));
    let h96 = final_loss(runs.get(TargetKind::Hog, 96));
    let p64 = final_loss(runs.get(TargetKind::Pixel, 64));
    let p96 = final_loss(runs.get(TargetKind::Pixel, 96));
    let (hog_gap, pix_gap) = (gap(h64, h96), gap(p64, p96));
    check(
        wins >= 16 && hog_gap < pix_gap,
        format!(
            "hog SSIM beats pixel SSIM on {wins}/20 (mean {hog_mean:.3} vs {pix_mean:.3}); \
             relative loss gap 64 vs 96: hog {hog_gap:.3} ({h64:.4}/{h96:.4}), pixel {pix_gap:.3} ({p64:.4}/{p96:.4})"
        ),
    )
}

fn c8_magnitudes(runs: &mut Runs) -> Outcome {
    let hog = final_loss(runs.get(TargetKind::Hog, 64));
    let pix = final_loss(runs.get(TargetKind::Pixel, 64));
    check(hog < pix, format!("final loss hog {hog:.4} vs pixel {pix:.4}"))
}

fn c9_throughput() -> Outcome {
    let config = |res: usize, discard: bool| {
        let mut c = RunConfig::desk(Preset::VitToy);
        c.data.count = 32;
        c.schedule.batch_size = 8;
        c.model.encoder.discard_masked = discard;
        c.schedule.stages = vec![Stage { resolution: res, epochs: 1 }];
        c
    };
    let run = |res, discard| throughput_run(&config(res, discard), 12, 2).map_err(|e| e.to_string());
    let low = run(128, false)?;
    let high = run(224, false)?;
    let mae = run(224, true)?;
    let speedup = high.step_ms / low.step_ms;
    check(
        speedup >= 2.5 && mae.step_ms < high.step_ms,
        format!(
            "step ms 128: {:.1}, 224: {:.1} (speedup {speedup:.2}x); 224 discard {:.1} vs full {:.1}",
            low.step_ms, high.step_ms, mae.step_ms, high.step_ms
        ),
    )
}

fn bits(t: &Trainer) -> Vec<(String, Vec<u32>)> {
    t.model()
        .params()
        .iter()
        .map(|(n, p)| (n.clone(), p.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn same_records(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|((na, ta), (nb, tb))| {
            na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn c10_progressive() -> Outcome {
    let mut c = RunConfig::default();
    c.data.count = 32;
    c.data.size = 64;
    c.schedule.stages = vec![Stage { resolution: 32, epochs: 1 }, Stage { resolution: 64, epochs: 1 }];
    let mut t = Trainer::new(c.clone(), c.dataset().unwrap()).unwrap();
    let spe = t.steps_per_epoch();
    let first = t.run(Some(spe), None).unwrap();
    let before = bits(&t);
    let next = t.peek_batch().unwrap();
    let kept = bits(&t) == before;
    let second = t.run(None, None).unwrap();
    let names_same = bits(&t).iter().map(|x| &x.0).eq(before.iter().map(|x| &x.0));
    let finite = first.iter().chain(&second).all(|r| r.loss.is_finite());
    let crossed = next.resolution == 64 && second.iter().all(|r| r.resolution == 64);

    let mut single = c.clone();
    single.schedule.stages = vec![Stage { resolution: 32, epochs: 2 }];
    let a = pretrain(single.clone(), single.dataset().unwrap(), None).unwrap();
    let b = pretrain_progressive(single.clone(), single.dataset().unwrap(), None).unwrap();
    let matched = same_records(&a.checkpoint, &b.checkpoint);
    check(
        kept && names_same && finite && crossed && matched,
        format!(
            "32->64 boundary: parameters preserved {kept}, registry unchanged {names_same}, losses finite {finite} (last {:.4}); single stage matches pretrain {matched}",
            second.last().unwrap().loss
        ),
    )
}

fn c11_checkpoints() -> Outcome {
    let mut c = RunConfig::default();
    c.data.count = 32;
    c.schedule.stages = vec![Stage { resolution: 64, epochs: 2 }];
    let mut a = Trainer::new(c.clone(), c.dataset().unwrap()).unwrap();
    a.run(Some(3), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    a.checkpoint().unwrap().save(&path).unwrap();
    let mut b = Trainer::resume(c.clone(), c.dataset().unwrap(), &Checkpoint::load(&path).unwrap()).unwrap();
    a.train_step().unwrap();
    b.train_step().unwrap();
    let resumed = same_records(&a.checkpoint().unwrap(), &b.checkpoint().unwrap());

    let mut encoder = Preset::VitToy.encoder();
    encoder.depth = 12;
    encoder.truncate_to = Some(10);
    let config = ModelConfig {
        encoder,
        decoder: Preset::VitToy.decoder(),
        mask_level: fastmim::masking::MaskLevel::Image,
        learnable_mask_token: true,
        target: TargetKind::Hog.shape(&HogConfig::default()),
    };
    let short = ModelBundle::<f32>::new(config, 3).unwrap();
    let full = short.reinit_truncated(12).unwrap();
    let carried = short.params().iter().all(|(n, p)| full.param(n).is_some_and(|q| q.to_vec() == p.to_vec()));
    let blocks = full.params().iter().filter(|(n, _)| n.starts_with("encoder.blocks.11.")).count() > 0;
    let mut shapes = Vec::new();
    for res in [128, 224] {
        let img = Scene::sample(1, 0).render(res);
        let x = ImageBatch::<f32>::from_images(&[img], vec![0]).unwrap();
        let mask: BlockMask = sample_mask(1, (res, res), &MaskConfig::default(), 0).unwrap();
        let y = full.predict(&x.data, &mask).map_err(|e| e.to_string())?;
        if y.data().iter().all(|v| v.is_finite()) {
            shapes.push(format!("{res}: {:?}", y.shape()));
        }
    }
    check(
        resumed && carried && blocks && shapes.len() == 2,
        format!("resume bit-exact {resumed}; 10->12 carries weights {carried}; forward {}", shapes.join(", ")),
    )
}

fn main() {
    let mut runs = Runs::default();
    let mut failed = 0;
    let mut criterion = |id: usize, name: &str, budget_s: u64, f: &mut dyn FnMut(&mut Runs) -> Outcome| {
        let t0 = Instant::now();
        let outcome = f(&mut runs);
        let elapsed = t0.elapsed();
        let over = elapsed > Duration::from_secs(budget_s);
        let (ok, detail) = match outcome {
            Ok(d) => (!over, d),
            Err(d) => (false, d),
        };
        let budget = if over { " OVER BUDGET" } else { "" };
        println!(
            "{} C{id:<2} {name}: {detail} [{:.1}s of {budget_s}s{budget}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!ok);
    };
    criterion(1, "token arithmetic", 1, &mut |_| c1_tokens());
    criterion(2, "mask exactness", 10, &mut |_| c2_masks());
    criterion(3, "masking formula", 5, &mut |_| c3_mask_formula());
    criterion(4, "hog oracle equivalence", 30, &mut |_| c4_hog());
    criterion(5, "gradient suite", 120, &mut |_| c5_gradients());
    criterion(6, "training smoke", 300, &mut c6_training);
    criterion(7, "hog resolution robustness", 600, &mut c7_resolution);
    criterion(8, "loss magnitude ordering", 600, &mut c8_magnitudes);
    criterion(9, "throughput scaling", 300, &mut |_| c9_throughput());
    criterion(10, "progressive scheduler", 180, &mut |_| c10_progressive());
    criterion(11, "checkpoint integrity", 60, &mut |_| c11_checkpoints());
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
