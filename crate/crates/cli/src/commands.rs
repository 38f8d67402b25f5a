use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fastmim::bench::{cost_model, report_emit, throughput_run, Regime, ReportFormat, ReportRow, REFERENCE_RESOLUTION};
use fastmim::hog::{hog_extract, psnr, ssim, HogConfig};
use fastmim::imageio::ppm::{read_ppm, write_ppm};
use fastmim::imageio::synthetic::synthetic_image;
use fastmim::imageio::{compute_norm_stats, resize, Image, ImageBatch, ResizeMethod};
use fastmim::masking::{sample_mask, MaskConfig};
use fastmim::models::{Checkpoint, ModelBundle, Preset};
use fastmim::objective::{extract_targets, TargetKind};
use fastmim::tensor::write_raw;
use fastmim::trainer::{pretrain, pretrain_progressive, Stage, Trainer};
use fastmim::RunConfig;

/// Writes to standard output. A reader that goes away early (`| head`) is
/// not an error.
fn emit(args: fmt::Arguments) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_fmt(args) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*))? };
}

macro_rules! outln {
    ($($t:tt)*) => { emit(format_args!("{}\n", format_args!($($t)*)))? };
}

/// Invalid arguments detected after parsing.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "fastmim", version, about = "Masked image modeling pre-training with low-resolution inputs and HOG targets")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train at a single resolution.
    Pretrain(TrainArgs),
    /// Pre-train with progressively growing resolution.
    #[command(name = "pretrain-p")]
    PretrainP(TrainArgs),
    /// Extract a HOG field from a PPM image.
    Hog(HogArgs),
    /// Draw a sampled block mask over an image.
    Maskviz(MaskvizArgs),
    /// Analytic cost model or measured training throughput.
    Bench(BenchArgs),
    /// Predict masked blocks with a checkpoint and score them.
    Reconstruct(ReconstructArgs),
    /// Per-channel normalization statistics of a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    VitToy,
    SwinToy,
    VitBase,
    VitLarge,
    SwinBase,
    SwinLarge,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::VitToy => Preset::VitToy,
            PresetArg::SwinToy => Preset::SwinToy,
            PresetArg::VitBase => Preset::VitBase,
            PresetArg::VitLarge => Preset::VitLarge,
            PresetArg::SwinBase => Preset::SwinBase,
            PresetArg::SwinLarge => Preset::SwinLarge,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Recipe {
    /// Synthetic data, batch 16, a few hundred steps.
    Desk,
    /// Batch 2048 over 400 epochs of an image directory.
    FullScale,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Model preset for the default configuration.
    #[arg(long, value_enum, default_value = "vit-toy", conflicts_with = "config")]
    preset: PresetArg,
    /// Recipe for the default configuration.
    #[arg(long, value_enum, default_value = "desk", conflicts_with = "config")]
    recipe: Recipe,
    /// Override the seed (after the config file and FASTMIM_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the stage list, e.g. `128:2,160:1,192:1` (resolution:epochs).
    #[arg(long)]
    stages: Option<String>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_defaults: bool,
}

#[derive(Debug, Args)]
struct HogArgs {
    /// Input PPM image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output HOG field file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    bins: usize,
    /// Cell side in pixels.
    #[arg(long, default_value_t = 8)]
    cell: usize,
    /// One histogram from the strongest channel instead of one per channel.
    #[arg(long)]
    single_channel: bool,
}

#[derive(Debug, Args)]
struct MaskvizArgs {
    /// Input PPM image; a synthetic image is drawn when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Side of the synthetic image.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Output PPM with masked blocks greyed out.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    mask_size: usize,
    #[arg(long, default_value_t = 0.75)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Analytic token and FLOP counts only.
    #[arg(long, conflicts_with = "measure")]
    model_only: bool,
    /// Time real training steps.
    #[arg(long)]
    measure: bool,
    #[arg(long, value_enum, default_value = "vit-base")]
    preset: PresetArg,
    /// Input resolutions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [224usize, 128])]
    resolutions: Vec<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timed steps per configuration (after warmup).
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Run configuration the checkpoint was trained with.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input PPM image; a synthetic image is drawn when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Input resolution; defaults to the last training stage.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Run configuration whose data section is measured.
    #[arg(long, conflicts_with = "data")]
    config: Option<PathBuf>,
    /// Directory of PPM images (or a manifest file).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(a) => train(a, false),
        Command::PretrainP(a) => train(a, true),
        Command::Hog(a) => hog(a),
        Command::Maskviz(a) => maskviz(a),
        Command::Bench(a) => bench(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Stats(a) => stats(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    c.apply_env()?;
    Ok(c)
}

fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    s.split(',')
        .map(|part| {
            let (r, e) = part
                .split_once(':')
                .ok_or_else(|| usage(format!("stage {part:?} is not resolution:epochs")))?;
            Ok(Stage {
                resolution: r.trim().parse().map_err(|_| usage(format!("bad resolution in {part:?}")))?,
                epochs: e.trim().parse().map_err(|_| usage(format!("bad epoch count in {part:?}")))?,
            })
        })
        .collect()
}

fn train(a: TrainArgs, progressive: bool) -> Result<()> {
    let mut config = match &a.config {
        Some(_) => load_config(a.config.as_deref())?,
        None => {
            let mut c = match a.recipe {
                Recipe::Desk => RunConfig::desk(a.preset.into()),
                Recipe::FullScale => RunConfig::full_scale(a.preset.into()),
            };
            c.apply_env()?;
            c
        }
    };
    if let Some(seed) = a.seed {
        config.data.seed = seed;
    }
    if let Some(s) = &a.stages {
        config.schedule.stages = parse_stages(s)?;
    }
    if a.dump_defaults {
        out!("{}", config.to_toml());
        return Ok(());
    }
    config.validate()?;
    let out = a.out.as_deref().ok_or_else(|| usage("--out is required for training"))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), config.to_toml())?;
    let dataset = config.dataset()?;
    log::info!(
        "config {} | {} images | stages {:?}",
        &config.digest()[..12],
        dataset.len(),
        config.schedule.stages
    );
    let records = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if !progressive && config.schedule.stages.len() != 1 {
                return Err(usage("pretrain takes a single stage; use pretrain-p"));
            }
            let mut t = Trainer::resume(config, dataset, &ck)?;
            log::info!("resuming at step {} of {}", t.step(), t.total_steps());
            t.run(None, Some(out))?
        }
        None if progressive => pretrain_progressive(config, dataset, Some(out))?.records,
        None => pretrain(config, dataset, Some(out))?.records,
    };
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        outln!(
            "trained steps {}..={}: loss {:.5} -> {:.5}; outputs in {}",
            first.step,
            last.step,
            first.loss,
            last.loss,
            out.display()
        );
    } else {
        outln!("nothing left to train");
    }
    Ok(())
}

fn hog(a: HogArgs) -> Result<()> {
    let cfg = HogConfig {
        bins: a.bins,
        cell: a.cell,
        per_channel: !a.single_channel,
        ..Default::default()
    };
    cfg.validate()?;
    let img = read_ppm(&a.input)?;
    let batch = ImageBatch::<f32>::from_images(&[img], vec![0])?;
    let field = hog_extract(&batch, &cfg)?;
    field.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let (hc, wc) = field.cells();
    outln!("bins={} cell={} cells={hc}x{wc} features={}", cfg.bins, cfg.cell, cfg.cell_dim());
    Ok(())
}

fn input_image(path: Option<&Path>, size: usize, seed: u64) -> Result<Image> {
    Ok(match path {
        Some(p) => read_ppm(p)?,
        None => synthetic_image(seed, 0, size),
    })
}

fn maskviz(a: MaskvizArgs) -> Result<()> {
    let img = input_image(a.input.as_deref(), a.size, a.seed)?;
    let cfg = MaskConfig {
        mask_size: a.mask_size,
        ratio: a.ratio,
        ..Default::default()
    };
    let mask = sample_mask(1, (img.height(), img.width()), &cfg, a.seed)?;
    let keep = mask.pixel_mask::<f32>();
    let keep = keep.data();
    let mut out = img.clone();
    let n = img.width() * img.height();
    for c in 0..3 {
        for (i, v) in out.data_mut()[c * n..(c + 1) * n].iter_mut().enumerate() {
            if keep[i] == 0.0 {
                *v = 0.5;
            }
        }
    }
    write_ppm(&a.out, &out)?;
    let (rows, cols) = mask.grid();
    outln!(
        "grid {rows}x{cols}, masked {} of {}: {:?}",
        mask.masked_count(0),
        mask.blocks(),
        mask.masked_indices(0)
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if !a.model_only && !a.measure {
        return Err(usage("choose --model-only or --measure"));
    }
    let preset: Preset = a.preset.into();
    let enc = preset.encoder();
    let dec = preset.decoder();
    let mask = MaskConfig {
        mask_size: preset.mask_size(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &res in &a.resolutions {
        let lowres = if res < REFERENCE_RESOLUTION { Regime::FastmimLowres } else { Regime::MimFull };
        let mut regimes = vec![lowres];
        if preset.encoder().family == fastmim::models::EncoderFamily::Isotropic {
            regimes.push(Regime::MaeDiscard);
        }
        for regime in regimes {
            let label = format!("{}@{res}", preset.name());
            if a.model_only {
                let cost = cost_model(&enc, &dec, res, &mask, regime)?;
                if regime != Regime::MaeDiscard {
                    summary.push(format!("tokens@{res}={}", cost.token_counts[0]));
                }
                rows.push(ReportRow::from_cost(label, &cost));
            } else {
                let mut c = RunConfig::desk(preset);
                c.schedule.batch_size = a.batch;
                c.data.count = a.batch * 2;
                c.model.encoder.discard_masked = regime == Regime::MaeDiscard;
                c.mask.mask_size = mask.mask_size;
                c.schedule.stages = vec![Stage { resolution: res, epochs: 1 }];
                let t = throughput_run(&c, a.steps + a.warmup, a.warmup)?;
                rows.push(ReportRow::from_measurement(label, &t));
            }
        }
    }
    let format = match a.format {
        FormatArg::Text => ReportFormat::Text,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let table = report_emit(&rows, format);
    match &a.out {
        Some(p) => std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => out!("{table}"),
    }
    if !summary.is_empty() {
        outln!("{}", summary.join(" "));
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    config.validate()?;
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if ck.digest != config.digest() {
        log::warn!("checkpoint digest {} differs from the config's", &ck.digest[..ck.digest.len().min(12)]);
    }
    let model = ModelBundle::<f32>::new(config.model_config(), 0)?;
    model.load_state(&ck.records)?;
    let res = a
        .resolution
        .unwrap_or_else(|| config.schedule.stages.last().map_or(128, |s| s.resolution));
    let img = input_image(a.input.as_deref(), res, a.seed)?;
    let img = if img.height() != res || img.width() != res {
        resize(&img, res, res, ResizeMethod::Area)?
    } else {
        img
    };
    let dataset = config.dataset()?;
    let stats = config.norm_stats(&dataset);
    let clean = ImageBatch::<f32>::from_images(std::slice::from_ref(&img), vec![0])?;
    let mask = sample_mask(1, (res, res), &config.mask.mask_config(), a.seed)?;
    let input = if config.mask.before_norm {
        fastmim::imageio::normalize(&model.mask_input(&clean.data, &mask)?, &stats)?
    } else {
        model.mask_input(&fastmim::imageio::normalize(&clean.data, &stats)?, &mask)?
    };
    let pred = model.forward(&input, &mask)?;
    let t = &config.target;
    let target = extract_targets(&clean, &mask, t.kind, &t.hog, &stats)?;
    std::fs::create_dir_all(&a.out)?;
    write_raw(&pred, std::fs::File::create(a.out.join("prediction.bin"))?)?;
    write_raw(&target.data, std::fs::File::create(a.out.join("target.bin"))?)?;

    // every masked block as planes of (unit grid) x (unit grid) per feature
    let m = config.mask.mask_size / target.layout.shape.unit;
    let features = target.layout.shape.features;
    let planar = |v: &[f32]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (blk, chunk) in v.chunks(m * m * features).enumerate() {
            for u in 0..m * m {
                for f in 0..features {
                    out[blk * m * m * features + f * m * m + u] = chunk[u * features + f] as f64;
                }
            }
        }
        out
    };
    let (p, g) = (planar(&pred.data()), planar(&target.data.data()));
    let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-6);
    let k = mask.masked_count(0);
    let report = serde_json::json!({
        "target": t.kind,
        "resolution": res,
        "masked_blocks": k,
        "block_dim": target.layout.dim(),
        "psnr": psnr(&p, &g, range),
        "ssim": ssim(&p, &g, k * features, m, m, range),
        "config_digest": ck.digest,
    });
    std::fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;

    if t.kind == TargetKind::Pixel {
        let mut out = img.clone();
        let n = res * res;
        let s = config.mask.mask_size;
        let cols = res / s;
        let data = pred.data();
        for (slot, block) in mask.masked_indices(0).into_iter().enumerate() {
            let (by, bx) = (block / cols * s, block % cols * s);
            for y in 0..s {
                for x in 0..s {
                    for c in 0..3 {
                        let v = data[slot * s * s * 3 + (y * s + x) * 3 + c] as f64;
                        let raw = v * stats.std[c] + stats.mean[c];
                        out.data_mut()[c * n + (by + y) * res + bx + x] = raw.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
        write_ppm(&a.out.join("reconstruction.ppm"), &out)?;
    }
    outln!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let dataset = match (&a.config, &a.data) {
        (_, Some(dir)) => fastmim::imageio::Dataset::ppm_dir(dir)?,
        (path, None) => load_config(path.as_deref())?.dataset()?,
    };
    let s = compute_norm_stats(&dataset);
    let json = serde_json::json!({ "images": dataset.len(), "mean": s.mean, "std": s.std });
    let text = serde_json::to_string_pretty(&json)?;
    match &a.out {
        Some(p) => std::fs::write(p, &text)?,
        None => outln!("{text}"),
    }
    Ok(())
}
