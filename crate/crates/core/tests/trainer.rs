use fastmim::config::SEED_ENV;
use fastmim::models::Checkpoint;
use fastmim::objective::TargetKind;
use fastmim::trainer::{
    adamw_step, lr_at, pretrain, pretrain_progressive, read_metrics, AdamWConfig, LrShape, OptimState, Schedule, Stage,
    StageSchedule, Trainer, FINAL_CHECKPOINT, METRICS_FILE,
};
use fastmim::{Error, RunConfig, Tensor};
use proptest::prelude::*;

fn tiny() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.count = 8;
    c.data.size = 48;
    c.data.workers = 0;
    c.model.encoder.depth = 2;
    c.model.encoder.embed_dim = 32;
    c.model.encoder.heads = 2;
    c.model.decoder = "1b32d".parse().unwrap();
    c.schedule.batch_size = 4;
    c.schedule.stages = vec![Stage {
        resolution: 32,
        epochs: 3,
    }];
    c
}

fn trainer(c: &RunConfig) -> Trainer {
    Trainer::new(c.clone(), c.dataset().unwrap()).unwrap()
}

fn param_bits(t: &Trainer) -> Vec<(String, Vec<u32>)> {
    t.model()
        .params()
        .iter()
        .map(|(n, p)| (n.clone(), p.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Textbook AdamW on one scalar, written out step by step.
fn reference_adamw(mut w: f64, grads: &[f64], lr: f64, c: &AdamWConfig, decay: bool) -> f64 {
    let (mut m, mut v) = (0.0, 0.0);
    for (i, g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g * g;
        let m_hat = m / (1.0 - c.beta1.powi(t));
        let v_hat = v / (1.0 - c.beta2.powi(t));
        if decay {
            w -= lr * c.weight_decay * w;
        }
        w -= lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    w
}

/// Sets the gradient of every entry of `p` to `g` through `sum(p * g)`.
fn set_grad(p: &Tensor<f64>, g: f64) {
    p.zero_grad();
    p.scale(g).unwrap().sum().unwrap().backward().unwrap();
}

#[test]
fn adamw_matches_reference_over_several_steps() {
    let c = AdamWConfig::default();
    let w = Tensor::<f64>::parameter(&[2, 2], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
    let b = Tensor::<f64>::parameter(&[2], vec![0.3, -0.7]).unwrap();
    let params = vec![("layer.weight".to_string(), w.clone()), ("layer.bias".to_string(), b.clone())];
    let mut state = OptimState::new(c, &params);
    let grads = [0.3, -1.2, 0.05, 2.0];
    let start_w = w.to_vec();
    let start_b = b.to_vec();
    for &g in &grads {
        set_grad(&w, g);
        set_grad(&b, g);
        adamw_step(&params, &mut state, 1e-2).unwrap();
    }
    assert_eq!(state.step(), 4);
    for (got, s) in w.to_vec().iter().zip(start_w) {
        assert!((got - reference_adamw(s, &grads, 1e-2, &c, true)).abs() < 1e-12);
    }
    for (got, s) in b.to_vec().iter().zip(start_b) {
        assert!((got - reference_adamw(s, &grads, 1e-2, &c, false)).abs() < 1e-12);
    }
}

#[test]
fn first_step_moves_by_lr_against_the_gradient() {
    for g in [3.0, -0.02] {
        let p = Tensor::<f64>::parameter(&[1, 1], vec![1.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let c = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = OptimState::new(c, &params);
        set_grad(&p, g);
        adamw_step(&params, &mut state, 1e-3).unwrap();
        let delta = p.item() - 1.0;
        assert!((delta + 1e-3 * f64::signum(g)).abs() < 1e-9, "{delta}");
    }
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let p = Tensor::<f64>::parameter(&[3, 2], vec![1.0, -2.0, 0.5, 0.0, 4.0, -0.25]).unwrap();
    let params = vec![("w".to_string(), p.clone())];
    let c = AdamWConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut state = OptimState::new(c, &params);
    let before = p.to_vec();
    set_grad(&p, 0.0);
    adamw_step(&params, &mut state, 0.1).unwrap();
    assert_eq!(p.to_vec(), before);
}

#[test]
fn decay_shrinks_only_decayed_parameters() {
    let c = tiny();
    let mut t = trainer(&c);
    let model = t.model().clone();
    let batch = t.peek_batch().unwrap();
    let clean = fastmim::imageio::ImageBatch::<f32>::from_images(&batch.images, batch.source_ids).unwrap();
    let mask = t.mask_for(0, batch.resolution).unwrap();
    let pred = model.forward(&t.model_input(&clean.data, &mask).unwrap(), &mask).unwrap();
    model.zero_grad();
    pred.sum().unwrap().scale(0.0).unwrap().backward().unwrap();
    let before: Vec<Vec<f32>> = model.params().iter().map(|(_, p)| p.to_vec()).collect();
    let lr = 0.5;
    let mut state = OptimState::new(c.optim, model.params());
    adamw_step(model.params(), &mut state, lr).unwrap();
    let factor = 1.0 - lr as f32 * 0.05;
    let mut exempt = 0;
    for ((name, p), old) in model.params().iter().zip(&before) {
        let norm = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if state.decays(name).unwrap() {
            for (a, b) in p.data().iter().zip(old) {
                assert_eq!(*a, b * factor, "{name}");
            }
        } else {
            exempt += 1;
            assert_eq!(norm(&p.data()), norm(old), "{name}");
        }
    }
    for name in ["encoder.norm.weight", "encoder.blocks.0.attn.qkv.bias", "mask_token", "encoder.cls_token"] {
        assert_eq!(state.decays(name), Some(false), "{name}");
    }
    assert_eq!(state.decays("encoder.blocks.0.attn.qkv.weight"), Some(true));
    assert!(exempt > 10);
    drop(t.train_step().unwrap());
}

#[test]
fn lr_examples() {
    let s = Schedule {
        base_lr: 1.5e-4,
        batch_size: 2048,
        warmup_steps: 10,
        total_steps: 400,
        shape: LrShape::Cosine,
    };
    assert_eq!(lr_at(&s, 0), 0.0);
    assert!((lr_at(&s, 10) - 1.2e-3).abs() < 1e-15);
    assert!(lr_at(&s, 400).abs() < 1e-9);
    let step = Schedule {
        shape: LrShape::Step,
        ..s
    };
    assert_eq!(lr_at(&step, 359), 1.2e-3);
    assert!((lr_at(&step, 360) - 1.2e-4).abs() < 1e-15);
}

proptest! {
    #[test]
    fn lr_rises_then_falls(warmup in 1u64..50, extra in 2u64..500, base in 1e-5f64..1e-2) {
        let s = Schedule { base_lr: base, batch_size: 64, warmup_steps: warmup, total_steps: warmup + extra, shape: LrShape::Cosine };
        for t in 0..warmup {
            prop_assert!(lr_at(&s, t) < lr_at(&s, t + 1));
        }
        for t in warmup..s.total_steps {
            prop_assert!(lr_at(&s, t) > lr_at(&s, t + 1));
        }
        prop_assert!((lr_at(&s, warmup) - s.effective_lr()).abs() <= 1e-15);
    }
}

#[test]
fn stage_schedules() {
    let s = StageSchedule::new(
        vec![
            Stage { resolution: 128, epochs: 200 },
            Stage { resolution: 160, epochs: 100 },
            Stage { resolution: 192, epochs: 100 },
        ],
        32,
    )
    .unwrap();
    assert_eq!(s.total_epochs(), 400);
    let e: Vec<u64> = s.stages.iter().map(|x| x.epochs).collect();
    assert_eq!(e, [2 * e[2], e[2], e[2]]);
    assert_eq!(s.boundaries(2), [0, 400, 600, 800]);
    assert_eq!(s.stage_at(399, 2), 0);
    assert_eq!(s.stage_at(400, 2), 1);
    assert_eq!(s.stage_at(10_000, 2), 2);

    let down = vec![Stage { resolution: 160, epochs: 1 }, Stage { resolution: 128, epochs: 1 }];
    assert!(StageSchedule::new(down, 32).unwrap_err().is_validation());
    let odd = vec![Stage { resolution: 144, epochs: 1 }];
    assert!(StageSchedule::new(odd, 32).unwrap_err().is_validation());
    assert!(StageSchedule::new(vec![], 32).is_err());
}

#[test]
fn config_roundtrip_and_digest() {
    let defaults = RunConfig::default();
    let text = defaults.to_toml();
    let parsed = RunConfig::from_toml(&text).unwrap();
    assert_eq!(parsed, defaults);
    assert_eq!(parsed.to_toml(), text);
    assert_eq!(parsed.digest(), defaults.digest());
    assert_eq!(defaults.digest().len(), 64);
    let mut other = defaults.clone();
    other.data.seed = 1;
    assert_ne!(other.digest(), defaults.digest());
    defaults.validate().unwrap();
    for p in fastmim::models::Preset::ALL {
        RunConfig::desk(p).validate().unwrap();
        let full = RunConfig::full_scale(p);
        full.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&full.to_toml()).unwrap(), full);
    }
}

#[test]
fn partial_and_malformed_configs() {
    let c = RunConfig::from_toml("[mask]\nratio = 0.5\n[model.encoder]\ndepth = 4\n").unwrap();
    assert_eq!(c.mask.ratio, 0.5);
    assert_eq!(c.model.encoder.depth, 4);
    assert_eq!(c.model.encoder.embed_dim, RunConfig::default().model.encoder.embed_dim);
    assert!(RunConfig::from_toml("[mask]\nratoi = 0.5\n").unwrap_err().is_validation());
    assert!(RunConfig::from_toml("[model]\ndecoder = \"1x64\"\n").unwrap_err().is_validation());
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut c = tiny();
    c.mask.mask_size = 24;
    assert!(Trainer::new(c.clone(), c.dataset().unwrap()).err().unwrap().is_validation());

    // 4 blocks at ratio 0.1 would mask none of them
    let mut c = tiny();
    c.mask.ratio = 0.1;
    let err = Trainer::new(c.clone(), c.dataset().unwrap()).err().unwrap();
    assert!(err.is_validation(), "{err}");

    let mut c = tiny();
    c.schedule.batch_size = 16;
    assert!(Trainer::new(c.clone(), c.dataset().unwrap()).err().unwrap().is_validation());

    let mut c = tiny();
    c.target.hog.cell = 12;
    assert!(c.validate().unwrap_err().is_validation());

    let mut c = tiny();
    c.model.encoder.family = fastmim::models::EncoderFamily::Hierarchical;
    c.model.encoder.discard_masked = true;
    assert!(c.validate().unwrap_err().is_validation());
}

#[test]
fn seed_override_from_environment() {
    let mut c = RunConfig::default();
    std::env::set_var(SEED_ENV, "1234");
    c.apply_env().unwrap();
    assert_eq!(c.data.seed, 1234);
    std::env::set_var(SEED_ENV, "not-a-seed");
    assert!(c.apply_env().unwrap_err().is_validation());
    std::env::remove_var(SEED_ENV);
    c.apply_env().unwrap();
    assert_eq!(c.data.seed, 1234);
}

#[test]
fn runs_are_deterministic_and_threading_does_not_matter() {
    let c = tiny();
    let mut a = trainer(&c);
    let ra = a.run(None, None).unwrap();
    let mut threaded = c.clone();
    threaded.data.workers = 2;
    threaded.data.prefetch = 1;
    let mut b = Trainer::new(threaded.clone(), threaded.dataset().unwrap()).unwrap();
    let rb = b.run(None, None).unwrap();
    assert_eq!(ra.len(), 6);
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!((x.step, x.lr.to_bits(), x.loss.to_bits()), (y.step, y.lr.to_bits(), y.loss.to_bits()));
    }
    assert_eq!(param_bits(&a), param_bits(&b));
    assert!(a.is_done());
    assert!(matches!(a.train_step(), Err(Error::Contract(_))));
}

#[test]
fn resume_continues_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for target in [TargetKind::Hog, TargetKind::Pixel] {
        let mut c = tiny();
        c.target.kind = target;
        let mut a = trainer(&c);
        a.run(Some(2), None).unwrap();
        let path = dir.path().join("mid.ckpt");
        a.checkpoint().unwrap().save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut b = Trainer::resume(c.clone(), c.dataset().unwrap(), &ck).unwrap();
        assert_eq!(b.step(), 2);
        assert_eq!(param_bits(&a), param_bits(&b));
        let ra = a.train_step().unwrap();
        let rb = b.train_step().unwrap();
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        assert_eq!(param_bits(&a), param_bits(&b));
        let (ca, cb) = (a.checkpoint().unwrap(), b.checkpoint().unwrap());
        for ((na, ta), (nb, tb)) in ca.records.iter().zip(&cb.records) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec(), "{na}");
        }

        let mut other = c.clone();
        other.data.seed = 9;
        let err = Trainer::resume(other.clone(), other.dataset().unwrap(), &ck).err().unwrap();
        assert!(err.is_validation());
    }
}

#[test]
fn progressive_run_keeps_parameters_across_the_boundary() {
    let mut c = tiny();
    c.data.size = 64;
    c.schedule.stages = vec![Stage { resolution: 32, epochs: 1 }, Stage { resolution: 64, epochs: 1 }];
    let mut t = trainer(&c);
    let names: Vec<String> = t.model().params().iter().map(|(n, _)| n.clone()).collect();
    let first = t.run(Some(t.steps_per_epoch()), None).unwrap();
    assert!(first.iter().all(|r| r.resolution == 32 && r.loss.is_finite()));
    let at_boundary = param_bits(&t);
    let batch = t.peek_batch().unwrap();
    assert_eq!(batch.resolution, 64);
    assert_eq!(param_bits(&t), at_boundary);
    let second = t.run(None, None).unwrap();
    assert!(second.iter().all(|r| r.resolution == 64 && r.stage == 1 && r.loss.is_finite()));
    let after: Vec<String> = t.model().params().iter().map(|(n, _)| n.clone()).collect();
    assert_eq!(names, after);
    // one schedule spans both stages
    assert!(second[0].lr < first[first.len() - 1].lr || t.schedule().warmup_steps >= 2);
}

#[test]
fn single_stage_progressive_matches_pretrain() {
    let c = tiny();
    let a = pretrain(c.clone(), c.dataset().unwrap(), None).unwrap();
    let b = pretrain_progressive(c.clone(), c.dataset().unwrap(), None).unwrap();
    for ((na, ta), (nb, tb)) in a.checkpoint.records.iter().zip(&b.checkpoint.records) {
        assert_eq!(na, nb);
        assert_eq!(ta.to_vec(), tb.to_vec());
    }
    let mut two = c.clone();
    two.data.size = 64;
    two.schedule.stages.push(Stage { resolution: 64, epochs: 1 });
    assert!(pretrain(two.clone(), two.dataset().unwrap(), None).unwrap_err().is_validation());
}

#[test]
fn outputs_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.data.size = 64;
    c.schedule.stages = vec![Stage { resolution: 32, epochs: 1 }, Stage { resolution: 64, epochs: 1 }];
    let out = pretrain_progressive(c.clone(), c.dataset().unwrap(), Some(dir.path())).unwrap();
    let logged = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(logged, out.records);
    let header = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert!(header.lines().next().unwrap().contains(&c.digest()));
    let stage0 = Checkpoint::load(&dir.path().join("stage0.ckpt")).unwrap();
    assert_eq!(stage0.get("trainer.step").unwrap().item(), 2.0);
    let last = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(last.digest, c.digest());
    assert_eq!(last.get("trainer.step").unwrap().item(), 4.0);
}

#[test]
fn divergence_is_reported_with_statistics() {
    let mut c = tiny();
    c.schedule.base_lr = 1e36;
    c.schedule.warmup_epochs = Some(0.0);
    let mut t = trainer(&c);
    let err = t.run(None, None).unwrap_err();
    match err {
        Error::Diverged { detail, .. } => assert!(detail.contains("input") && detail.contains("nonfinite")),
        other => panic!("expected divergence, got {other}"),
    }
}
