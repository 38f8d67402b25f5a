use fastmim::bench::{
    cost_model, parse_csv, report_emit, spearman, throughput_run, visible_tokens, Regime, ReportFormat, ReportRow,
    COLUMNS,
};
use fastmim::masking::MaskConfig;
use fastmim::models::{DecoderConfig, EncoderConfig, Preset};
use fastmim::trainer::Stage;
use fastmim::RunConfig;
use proptest::prelude::*;

fn vit() -> (EncoderConfig, DecoderConfig, MaskConfig) {
    (Preset::VitBase.encoder(), Preset::VitBase.decoder(), MaskConfig::default())
}

/// Blocks-only multiply-adds written out directly.
fn block_flops(n: f64, m: f64, d: f64) -> f64 {
    4.0 * n * d * d + 2.0 * n * m * d + 8.0 * n * d * d
}

#[test]
fn token_arithmetic() {
    let (e, d, m) = vit();
    let hi = cost_model(&e, &d, 224, &m, Regime::MimFull).unwrap();
    let lo = cost_model(&e, &d, 128, &m, Regime::FastmimLowres).unwrap();
    assert_eq!(hi.token_counts, [196]);
    assert_eq!(lo.token_counts, [64]);
    let reduction = lo.token_reduction_vs(&hi);
    assert!((reduction - 132.0 / 196.0).abs() < 1e-15);
    assert_eq!((reduction * 1000.0).round(), 673.0);

    let mae = cost_model(&e, &d, 224, &m, Regime::MaeDiscard).unwrap();
    assert_eq!(mae.encoder_tokens, 49 + 1);
    assert_eq!(visible_tokens(196, 0.75), 49);
    assert_eq!(visible_tokens(197, 0.75), 50);
    let by_regime: Vec<(Regime, usize, usize)> =
        lo.comparisons.iter().map(|c| (c.regime, c.resolution, c.encoder_tokens)).collect();
    assert_eq!(
        by_regime,
        [(Regime::MimFull, 224, 196), (Regime::MaeDiscard, 224, 49), (Regime::FastmimLowres, 128, 64)]
    );
    assert_eq!(lo.comparisons[0].relative_flops, 1.0);
    assert!(lo.comparisons[2].relative_flops < 0.5);
    assert!(lo.comparisons[1].relative_flops < 1.0);
    assert_eq!(cost_model(&e, &d, 128, &m, Regime::FastmimLowres).unwrap(), lo);
}

#[test]
fn flops_match_hand_count() {
    let e = Preset::VitToy.encoder();
    let d = Preset::VitToy.decoder();
    let r = cost_model(&e, &d, 224, &MaskConfig::default(), Regime::MimFull).unwrap();
    let want = 6.0 * block_flops(197.0, 197.0, 96.0) + block_flops(196.0, 196.0, 64.0);
    assert!((r.total_flops - want).abs() / want < 1e-12);
    assert_eq!(r.total_flops, r.attention_flops + r.mlp_flops);
    let mlp = 6.0 * 8.0 * 197.0 * 96.0 * 96.0 + 8.0 * 196.0 * 64.0 * 64.0;
    assert!((r.mlp_flops - mlp).abs() / mlp < 1e-12);

    // windows of 7x7 at 224 for a hierarchical stem of 4
    let e = Preset::SwinToy.encoder();
    let d = Preset::SwinToy.decoder();
    let r = cost_model(&e, &d, 224, &MaskConfig { mask_size: 32, ..Default::default() }, Regime::MimFull).unwrap();
    assert_eq!(r.token_counts, [3136, 784, 196, 49]);
    let mut want = 0.0;
    for (s, (&n, &depth)) in [3136.0, 784.0, 196.0, 49.0].iter().zip(&[2, 2, 6, 2]).enumerate() {
        want += depth as f64 * block_flops(n, 49.0, 96.0 * f64::powi(2.0, s as i32));
    }
    want += block_flops(49.0, 49.0, 128.0);
    assert!((r.total_flops - want).abs() / want < 1e-12);
    assert!(cost_model(&e, &d, 224, &MaskConfig::default(), Regime::MaeDiscard).is_err());
}

proptest! {
    #[test]
    fn cost_grows_with_depth_width_and_tokens(depth in 1usize..12, width in 1usize..8, side in 2usize..14) {
        let mut e = Preset::VitToy.encoder();
        e.depth = depth;
        e.embed_dim = width * 12;
        e.heads = 3;
        let d = Preset::VitToy.decoder();
        let m = MaskConfig::default();
        let res = side * 16;
        let base = cost_model(&e, &d, res, &m, Regime::MimFull).unwrap();
        let deeper = cost_model(&EncoderConfig { depth: depth + 1, ..e.clone() }, &d, res, &m, Regime::MimFull).unwrap();
        let wider = cost_model(&EncoderConfig { embed_dim: e.embed_dim + 12, ..e.clone() }, &d, res, &m, Regime::MimFull).unwrap();
        let larger = cost_model(&e, &d, res + 16, &m, Regime::MimFull).unwrap();
        prop_assert!(deeper.total_flops > base.total_flops);
        prop_assert!(wider.total_flops > base.total_flops);
        prop_assert!(larger.total_flops > base.total_flops);
        // one extra block adds exactly one block's cost
        let n = base.encoder_tokens as f64;
        let step = deeper.total_flops - base.total_flops;
        prop_assert!((step - block_flops(n, n, e.embed_dim as f64)).abs() <= 1e-9 * step);
        prop_assert!(base.total_flops >= 0.0 && base.activation_elements >= 0.0);
        if res < 224 {
            let low = cost_model(&e, &d, res, &m, Regime::FastmimLowres).unwrap();
            prop_assert!(low.comparisons[2].encoder_tokens < low.comparisons[0].encoder_tokens);
        }
    }
}

fn sample_rows() -> Vec<ReportRow> {
    let (e, d, m) = vit();
    let mut rows: Vec<ReportRow> = [(224, Regime::MimFull), (224, Regime::MaeDiscard), (128, Regime::FastmimLowres)]
        .iter()
        .map(|&(r, g)| ReportRow::from_cost(format!("vit-base@{r}"), &cost_model(&e, &d, r, &m, g).unwrap()))
        .collect();
    rows[1].step_ms = Some(12.345678901234);
    rows[1].imgs_per_sec = Some(1e-7);
    rows
}

#[test]
fn reports_roundtrip_and_agree() {
    let rows = sample_rows();
    let csv = report_emit(&rows, ReportFormat::Csv);
    assert_eq!(parse_csv(&csv).unwrap(), rows);
    let text = report_emit(&rows, ReportFormat::Text);
    let text_cells: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    for (line, csv_line) in text_cells.iter().zip(csv.lines()) {
        let csv_cells: Vec<&str> = csv_line.split(',').filter(|c| !c.is_empty()).collect();
        assert_eq!(*line, csv_cells);
    }
    let empty = report_emit(&[], ReportFormat::Csv);
    assert_eq!(empty.trim_end(), COLUMNS.join(","));
    assert!(parse_csv(&empty).unwrap().is_empty());
    assert!(parse_csv("a,b\n1,2\n").is_err());
}

#[test]
fn spearman_examples() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((spearman(&x, &[10.0, 20.0, 25.0, 100.0, 1000.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    // ranks with ties: y -> [1.5, 1.5, 3, 4, 5]; Pearson of ranks by hand
    let r = spearman(&x, &[1.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let ry = [1.5, 1.5, 3.0, 4.0, 5.0];
    let cov: f64 = x.iter().zip(&ry).map(|(a, b)| (a - 3.0) * (b - 3.0)).sum();
    let vx: f64 = x.iter().map(|a| (a - 3.0) * (a - 3.0)).sum();
    let vy: f64 = ry.iter().map(|b| (b - 3.0) * (b - 3.0)).sum();
    assert!((r - cov / (vx * vy).sqrt()).abs() < 1e-15);
    assert!(spearman(&x, &x[..3]).is_err());
}

fn bench_config(resolution: usize, depth: usize) -> RunConfig {
    let mut c = RunConfig::desk(Preset::VitToy);
    c.data.count = 8;
    c.data.size = 96;
    c.schedule.batch_size = 4;
    c.model.encoder.depth = depth;
    c.schedule.stages = vec![Stage { resolution, epochs: 1 }];
    c
}

#[test]
fn measured_time_tracks_modeled_flops() {
    let mut flops = Vec::new();
    let mut times = Vec::new();
    for res in [32, 64, 96] {
        for depth in [1, 4] {
            let t = throughput_run(&bench_config(res, depth), 7, 2).unwrap();
            assert_eq!(t.measured_steps, 5);
            assert!(t.step_ms > 0.0 && t.imgs_per_sec > 0.0);
            assert!(t.phases.total_ms() <= t.step_ms * 1.5);
            flops.push(t.cost.total_flops);
            times.push(t.step_ms);
        }
    }
    let rho = spearman(&flops, &times).unwrap();
    assert!(rho >= 0.9, "rho {rho}: flops {flops:?} times {times:?}");
}

#[test]
fn repeated_measurements_are_stable() {
    let c = bench_config(64, 2);
    let a = throughput_run(&c, 12, 2).unwrap();
    let b = throughput_run(&c, 12, 2).unwrap();
    let ratio = a.step_ms / b.step_ms;
    assert!((0.75..=1.0 / 0.75).contains(&ratio), "{} vs {}", a.step_ms, b.step_ms);
    assert!(throughput_run(&c, 2, 2).unwrap_err().is_validation());
}
