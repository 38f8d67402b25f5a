//! Encoders, bridge and reconstruction decoder.
//!
//! Two encoder families share the same masked-input front end:
//!
//! * isotropic: linear patch embedding, 2-d sine-cosine positions, optional
//!   class token, pre-norm transformer blocks and a closing LayerNorm. In
//!   discard mode only the visible tokens enter the encoder and the decoder
//!   re-inserts a learned mask token at the hidden positions.
//! * hierarchical: a stride-4 stem followed by four stages of non-shifted
//!   window attention with 2x2 patch merging in between (strides 4 to 32).
//!
//! A linear bridge maps encoder width to decoder width. The decoder runs its
//! blocks on the final token grid; the head predicts, for every token, the
//! target units (pixels or HOG cells) it covers. Predictions are then
//! regrouped into mask blocks and gathered at the masked ones.

mod checkpoint;
mod layers;
mod pe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use pe::{patchify, sincos_pe};

use crate::error::{Error, Result};
use crate::masking::{apply_mask, apply_mask_tokens, select_visible, BlockMask, MaskLevel, MaskToken, VisibleIndex};
use crate::rng;
use crate::tensor::{Element, Tensor};
use layers::{check_heads, Block, LayerNorm, Linear, Registry};
use pe::{tile, untile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    Isotropic,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub family: EncoderFamily,
    /// Patch size (isotropic) or stem stride (hierarchical), in pixels.
    pub patch_size: usize,
    /// Token width (hierarchical: first stage; doubles per stage).
    pub embed_dim: usize,
    /// Block count, isotropic only.
    pub depth: usize,
    /// Blocks per stage, hierarchical only.
    pub stage_depths: [usize; 4],
    /// Attention heads (hierarchical: first stage; doubles per stage).
    pub heads: usize,
    /// Attention window in tokens, hierarchical only; derived from the
    /// input resolution when unset.
    pub window: Option<usize>,
    /// Keep only this many blocks (counted from the input side).
    pub truncate_to: Option<usize>,
    /// Encode visible tokens only, isotropic only.
    pub discard_masked: bool,
    pub use_class_token: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            family: EncoderFamily::Isotropic,
            patch_size: 16,
            embed_dim: 96,
            depth: 6,
            stage_depths: [2, 2, 6, 2],
            heads: 3,
            window: None,
            truncate_to: None,
            discard_masked: false,
            use_class_token: true,
        }
    }
}

impl EncoderConfig {
    /// Untruncated block count.
    pub fn full_depth(&self) -> usize {
        match self.family {
            EncoderFamily::Isotropic => self.depth,
            EncoderFamily::Hierarchical => self.stage_depths.iter().sum(),
        }
    }

    /// Blocks actually instantiated, per stage (one stage when isotropic).
    pub fn effective_depths(&self) -> Vec<usize> {
        let keep = self.truncate_to.unwrap_or(self.full_depth());
        match self.family {
            EncoderFamily::Isotropic => vec![keep],
            EncoderFamily::Hierarchical => {
                let mut left = keep;
                self.stage_depths
                    .iter()
                    .map(|&d| {
                        let k = d.min(left);
                        left -= k;
                        k
                    })
                    .collect()
            }
        }
    }

    pub fn stage_dims(&self) -> Vec<usize> {
        match self.family {
            EncoderFamily::Isotropic => vec![self.embed_dim],
            EncoderFamily::Hierarchical => (0..4).map(|s| self.embed_dim << s).collect(),
        }
    }

    pub fn stage_heads(&self) -> Vec<usize> {
        match self.family {
            EncoderFamily::Isotropic => vec![self.heads],
            EncoderFamily::Hierarchical => (0..4).map(|s| self.heads << s).collect(),
        }
    }

    /// Width of the encoder output tokens.
    pub fn out_dim(&self) -> usize {
        *self.stage_dims().last().expect("at least one stage")
    }

    /// Pixels per output token side.
    pub fn out_stride(&self) -> usize {
        match self.family {
            EncoderFamily::Isotropic => self.patch_size,
            EncoderFamily::Hierarchical => self.patch_size * 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("patch_size must be > 0"));
        }
        if self.embed_dim % 4 != 0 {
            return Err(Error::config(format!(
                "embed_dim {} must be a multiple of 4 for sine-cosine positions",
                self.embed_dim
            )));
        }
        for (d, h) in self.stage_dims().into_iter().zip(self.stage_heads()) {
            check_heads(d, h, "encoder")?;
        }
        if self.family == EncoderFamily::Isotropic && self.depth == 0 {
            return Err(Error::config("isotropic depth must be > 0"));
        }
        if let Some(t) = self.truncate_to {
            if t == 0 || t > self.full_depth() {
                return Err(Error::config(format!(
                    "truncate_to {t} must be in 1..={}",
                    self.full_depth()
                )));
            }
        }
        if self.family == EncoderFamily::Hierarchical {
            if self.discard_masked {
                return Err(Error::config("discarding masked tokens needs an isotropic encoder"));
            }
            if self.use_class_token {
                return Err(Error::config("class token is only supported by isotropic encoders"));
            }
            if self.window == Some(0) {
                return Err(Error::config("window must be > 0"));
            }
        }
        Ok(())
    }

    /// Stage-1 window for a `height x width` input: the configured value, or
    /// a side of one eighth of the stage-1 grid (at least 2), clipped to the
    /// grid.
    pub fn window_for(&self, height: usize, width: usize) -> usize {
        let side = (height / self.patch_size).min(width / self.patch_size);
        self.window.unwrap_or((side / 8).max(2)).min(side).max(1)
    }

    /// Token grid of every stage for a `height x width` input.
    pub fn stage_grids(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let (gh, gw) = (height / self.patch_size, width / self.patch_size);
        (0..self.stage_dims().len()).map(|s| (gh >> s, gw >> s)).collect()
    }

    /// Checks that the encoder can consume a `height x width` image.
    pub fn check_resolution(&self, height: usize, width: usize) -> Result<()> {
        let stride = self.out_stride();
        if height == 0 || width == 0 || height % stride != 0 || width % stride != 0 {
            return Err(Error::config(format!(
                "resolution {height}x{width} is not a multiple of the encoder stride {stride}"
            )));
        }
        if self.family == EncoderFamily::Hierarchical {
            let ws = self.window_for(height, width);
            let (mut gh, mut gw) = (height / self.patch_size, width / self.patch_size);
            for s in 0..4 {
                let w = ws.min(gh).min(gw);
                if gh % w != 0 || gw % w != 0 {
                    return Err(Error::config(format!(
                        "window {w} does not divide the stage-{} grid {gh}x{gw}",
                        s + 1
                    )));
                }
                gh /= 2;
                gw /= 2;
            }
        }
        Ok(())
    }
}

/// Decoder size in `"<blocks>b<width>d"` notation, e.g. `1b256d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub width: usize,
}

impl DecoderConfig {
    /// Heads of 32 channels each when the width allows, else one.
    pub fn heads(&self) -> usize {
        if self.width % 32 == 0 {
            self.width / 32
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 4 != 0 {
            return Err(Error::config(format!("decoder width {} must be a positive multiple of 4", self.width)));
        }
        Ok(())
    }
}

impl fmt::Display for DecoderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}b{}d", self.blocks, self.width)
    }
}

impl FromStr for DecoderConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::config(format!("decoder {s:?} is not of the form <N>b<M>d"));
        let body = s.strip_suffix('d').ok_or_else(err)?;
        let (blocks, width) = body.split_once('b').ok_or_else(err)?;
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) && (t == "0" || !t.starts_with('0'));
        if !digits(blocks) || !digits(width) {
            return Err(err());
        }
        let cfg = DecoderConfig {
            blocks: blocks.parse().map_err(|_| err())?,
            width: width.parse().map_err(|_| err())?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Serialize for DecoderConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DecoderConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What one prediction unit is: `unit` pixels on a side carrying `features`
/// values (3 for RGB pixels, `bins * channels` for a HOG cell).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetShape {
    pub unit: usize,
    pub features: usize,
}

impl TargetShape {
    /// Values per mask block of side `mask_size`.
    pub fn block_dim(&self, mask_size: usize) -> usize {
        let m = mask_size / self.unit;
        m * m * self.features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub mask_level: MaskLevel,
    pub learnable_mask_token: bool,
    pub target: TargetShape,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let t = self.target;
        if t.unit == 0 || t.features == 0 {
            return Err(Error::config("target unit and features must be > 0"));
        }
        if self.encoder.out_stride() % t.unit != 0 {
            return Err(Error::config(format!(
                "target unit {} does not divide the encoder output stride {}",
                t.unit,
                self.encoder.out_stride()
            )));
        }
        if self.encoder.discard_masked && self.mask_level == MaskLevel::Patch {
            return Err(Error::config("discard mode drops masked tokens; patch-level tokens are unused"));
        }
        Ok(())
    }

    /// Checks a mask against this model: block side must be whole target
    /// units, and token-level masking needs blocks made of whole tokens.
    pub fn check_mask_size(&self, mask_size: usize) -> Result<()> {
        if mask_size % self.target.unit != 0 {
            return Err(Error::config(format!(
                "mask_size {mask_size} is not a multiple of the target unit {}",
                self.target.unit
            )));
        }
        let token = self.encoder.patch_size;
        let needs_tokens = self.encoder.discard_masked || self.mask_level == MaskLevel::Patch;
        if needs_tokens && mask_size % token != 0 {
            return Err(Error::config(format!(
                "mask_size {mask_size} must be a multiple of the {token}-pixel token for token-level masking"
            )));
        }
        Ok(())
    }
}

/// Named architecture shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    VitToy,
    SwinToy,
    VitBase,
    VitLarge,
    SwinBase,
    SwinLarge,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::VitToy,
        Preset::SwinToy,
        Preset::VitBase,
        Preset::VitLarge,
        Preset::SwinBase,
        Preset::SwinLarge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::VitToy => "vit-toy",
            Preset::SwinToy => "swin-toy",
            Preset::VitBase => "vit-base",
            Preset::VitLarge => "vit-large",
            Preset::SwinBase => "swin-base",
            Preset::SwinLarge => "swin-large",
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        let vit = |embed_dim, depth, heads| EncoderConfig {
            embed_dim,
            depth,
            heads,
            ..EncoderConfig::default()
        };
        let swin = |embed_dim, stage_depths, heads| EncoderConfig {
            family: EncoderFamily::Hierarchical,
            patch_size: 4,
            embed_dim,
            depth: 0,
            stage_depths,
            heads,
            use_class_token: false,
            ..EncoderConfig::default()
        };
        match self {
            Preset::VitToy => vit(96, 6, 3),
            Preset::SwinToy => swin(96, [2, 2, 6, 2], 3),
            Preset::VitBase => vit(768, 12, 12),
            Preset::VitLarge => vit(1024, 24, 16),
            Preset::SwinBase => swin(128, [2, 2, 18, 2], 4),
            Preset::SwinLarge => swin(192, [2, 2, 18, 2], 6),
        }
    }

    /// Default decoder for the encoder.
    pub fn decoder(&self) -> DecoderConfig {
        let (blocks, width) = match self {
            Preset::VitToy => (1, 64),
            Preset::SwinToy => (1, 128),
            Preset::VitBase => (1, 256),
            Preset::VitLarge => (8, 512),
            Preset::SwinBase => (4, 256),
            Preset::SwinLarge => (4, 512),
        };
        DecoderConfig { blocks, width }
    }

    /// Default mask block side.
    pub fn mask_size(&self) -> usize {
        match self.encoder().family {
            EncoderFamily::Isotropic => 16,
            EncoderFamily::Hierarchical => 32,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::config(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone)]
struct Merge<F: Element> {
    norm: LayerNorm<F>,
    reduction: Linear<F>,
}

#[derive(Debug, Clone)]
struct Stage<F: Element> {
    merge: Option<Merge<F>>,
    blocks: Vec<Block<F>>,
}

#[derive(Debug, Clone)]
enum Encoder<F: Element> {
    Isotropic {
        embed: Linear<F>,
        cls: Option<Tensor<F>>,
        blocks: Vec<Block<F>>,
        norm: LayerNorm<F>,
    },
    Hierarchical {
        embed: Linear<F>,
        embed_norm: LayerNorm<F>,
        stages: Vec<Stage<F>>,
        norm: LayerNorm<F>,
    },
}

#[derive(Debug, Clone)]
struct Decoder<F: Element> {
    mask_token: Option<Tensor<F>>,
    blocks: Vec<Block<F>>,
    norm: LayerNorm<F>,
    head: Linear<F>,
}

/// Encoder output without the class token.
#[derive(Debug, Clone)]
pub struct Encoded<F: Element = f32> {
    /// `[B, n, D]`; `n` is the visible count in discard mode, else the grid.
    pub tokens: Tensor<F>,
    /// Output token grid (rows, cols).
    pub grid: (usize, usize),
    /// Pixels per output token side.
    pub stride: usize,
    /// Positions of the encoded tokens in discard mode.
    pub visible: Option<VisibleIndex>,
    /// Tokens entering the first encoder block, class token included.
    pub processed_tokens: usize,
}

/// All learnable state plus the structure to run it.
#[derive(Debug, Clone)]
pub struct ModelBundle<F: Element = f32> {
    config: ModelConfig,
    seed: u64,
    params: Vec<(String, Tensor<F>)>,
    mask_token: MaskToken<F>,
    encoder: Encoder<F>,
    bridge: Linear<F>,
    decoder: Decoder<F>,
}

fn blocks<F: Element>(reg: &mut Registry<F>, n: usize, dim: usize, heads: usize) -> Vec<Block<F>> {
    let mut s = reg.scope("blocks");
    (0..n).map(|i| Block::new(&mut s, &i.to_string(), dim, heads)).collect()
}

fn run<F: Element>(blocks: &[Block<F>], mut x: Tensor<F>) -> Result<Tensor<F>> {
    for b in blocks {
        x = b.forward(&x)?;
    }
    Ok(x)
}

/// Tokens crossing the encoder (class token included).
fn with_class_token<F: Element>(x: &Tensor<F>, cls: &Tensor<F>) -> Result<Tensor<F>> {
    let s = x.shape();
    let c = Tensor::ones(&[s[0], 1, s[2]]).mul(cls)?;
    Tensor::concat(&[c, x.clone()], 1)
}

impl<F: Element> ModelBundle<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder;
        let mut params = Vec::new();
        let mut reg = Registry::new(seed, &mut params);

        let mask_token = match config.mask_level {
            MaskLevel::Image => {
                let t = MaskToken::image(config.learnable_mask_token && !enc.discard_masked);
                if t.learnable {
                    reg.register("mask_token", &t.value);
                }
                t
            }
            MaskLevel::Patch if config.learnable_mask_token => MaskToken {
                value: reg.trunc_normal("mask_token", &[enc.embed_dim]),
                learnable: true,
            },
            MaskLevel::Patch => MaskToken::embedding(enc.embed_dim, false, seed),
        };

        let depths = enc.effective_depths();
        let dims = enc.stage_dims();
        let heads = enc.stage_heads();
        let patch_in = 3 * enc.patch_size * enc.patch_size;
        let encoder = {
            let mut r = reg.scope("encoder");
            match enc.family {
                EncoderFamily::Isotropic => {
                    let embed = Linear::new(&mut r, "patch_embed", patch_in, enc.embed_dim, true);
                    let cls = enc.use_class_token.then(|| r.trunc_normal("cls_token", &[enc.embed_dim]));
                    let blocks = blocks(&mut r, depths[0], enc.embed_dim, enc.heads);
                    let norm = LayerNorm::new(&mut r, "norm", enc.embed_dim);
                    Encoder::Isotropic { embed, cls, blocks, norm }
                }
                EncoderFamily::Hierarchical => {
                    let embed = Linear::new(&mut r, "patch_embed", patch_in, dims[0], true);
                    let embed_norm = LayerNorm::new(&mut r, "patch_norm", dims[0]);
                    let mut stages = Vec::with_capacity(4);
                    let mut st = r.scope("stages");
                    for s in 0..4 {
                        let mut sr = st.scope(&s.to_string());
                        let merge = (s > 0).then(|| {
                            let mut m = sr.scope("downsample");
                            Merge {
                                norm: LayerNorm::new(&mut m, "norm", 4 * dims[s - 1]),
                                reduction: Linear::new(&mut m, "reduction", 4 * dims[s - 1], dims[s], false),
                            }
                        });
                        let blocks = blocks(&mut sr, depths[s], dims[s], heads[s]);
                        stages.push(Stage { merge, blocks });
                    }
                    let norm = LayerNorm::new(&mut r, "norm", dims[3]);
                    Encoder::Hierarchical {
                        embed,
                        embed_norm,
                        stages,
                        norm,
                    }
                }
            }
        };

        let dec = config.decoder;
        let bridge = Linear::new(&mut reg, "bridge", enc.out_dim(), dec.width, true);
        let decoder = {
            let mut r = reg.scope("decoder");
            let mask_token = enc.discard_masked.then(|| r.trunc_normal("mask_token", &[dec.width]));
            let blocks = blocks(&mut r, dec.blocks, dec.width, dec.heads());
            let norm = LayerNorm::new(&mut r, "norm", dec.width);
            let q = enc.out_stride() / config.target.unit;
            let head = Linear::new(&mut r, "head", dec.width, q * q * config.target.features, true);
            Decoder {
                mask_token,
                blocks,
                norm,
                head,
            }
        };

        Ok(ModelBundle {
            config,
            seed,
            params,
            mask_token,
            encoder,
            bridge,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Every learnable tensor under its stable name, in registration order.
    pub fn params(&self) -> &[(String, Tensor<F>)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn mask_token(&self) -> &MaskToken<F> {
        &self.mask_token
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, t)| t.zero_grad());
    }

    /// Values per masked block predicted for a given mask side.
    pub fn target_dim(&self, mask_size: usize) -> usize {
        self.config.target.block_dim(mask_size)
    }

    /// Replaces masked pixels with the image-level token; identity for the
    /// other modes, which mask after embedding.
    pub fn mask_input(&self, images: &Tensor<F>, mask: &BlockMask) -> Result<Tensor<F>> {
        if self.config.mask_level == MaskLevel::Image && !self.config.encoder.discard_masked {
            apply_mask(images, mask, &self.mask_token)
        } else {
            Ok(images.clone())
        }
    }

    fn check_input(&self, x: &Tensor<F>, mask: &BlockMask) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::dim("encode", format!("expected [B, 3, H, W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        self.config.encoder.check_resolution(h, w)?;
        if mask.resolution() != (h, w) || mask.batch() != s[0] {
            return Err(Error::dim(
                "encode",
                format!("mask covers {} x {:?}, input is {s:?}", mask.batch(), mask.resolution()),
            ));
        }
        self.config.check_mask_size(mask.mask_size())?;
        Ok((h, w))
    }

    /// Runs the encoder on a (masked) input `[B, 3, H, W]`.
    pub fn encode(&self, x: &Tensor<F>, mask: &BlockMask) -> Result<Encoded<F>> {
        let (h, w) = self.check_input(x, mask)?;
        let enc = &self.config.encoder;
        let p = enc.patch_size;
        let (gh, gw) = (h / p, w / p);
        match &self.encoder {
            Encoder::Isotropic { embed, cls, blocks, norm } => {
                let mut t = embed.forward(&patchify(x, p)?)?;
                if self.config.mask_level == MaskLevel::Patch {
                    t = apply_mask_tokens(&t, &mask.at_token_stride(p)?, &self.mask_token)?;
                }
                t = t.add(&sincos_pe(gh, gw, enc.embed_dim)?)?;
                let mut visible = None;
                if enc.discard_masked {
                    let (kept, index) = select_visible(&t, &mask.at_token_stride(p)?)?;
                    t = kept;
                    visible = Some(index);
                }
                if let Some(c) = cls {
                    t = with_class_token(&t, c)?;
                }
                let processed_tokens = t.shape()[1];
                t = norm.forward(&run(blocks, t)?)?;
                if cls.is_some() {
                    t = t.slice(1, 1, processed_tokens)?;
                }
                Ok(Encoded {
                    tokens: t,
                    grid: (gh, gw),
                    stride: p,
                    visible,
                    processed_tokens,
                })
            }
            Encoder::Hierarchical {
                embed,
                embed_norm,
                stages,
                norm,
            } => {
                let dims = enc.stage_dims();
                let mut t = embed_norm.forward(&embed.forward(&patchify(x, p)?)?)?;
                if self.config.mask_level == MaskLevel::Patch {
                    t = apply_mask_tokens(&t, &mask.at_token_stride(p)?, &self.mask_token)?;
                }
                t = t.add(&sincos_pe(gh, gw, dims[0])?)?;
                let processed_tokens = t.shape()[1];
                let b = t.shape()[0];
                let window = enc.window_for(h, w);
                let (mut rows, mut cols) = (gh, gw);
                for (s, stage) in stages.iter().enumerate() {
                    if let Some(m) = &stage.merge {
                        let grid = t.reshape(&[b, rows, cols, dims[s - 1]])?;
                        t = m.reduction.forward(&m.norm.forward(&tile(&grid, 2)?)?)?;
                        rows /= 2;
                        cols /= 2;
                    }
                    if stage.blocks.is_empty() {
                        continue;
                    }
                    let ws = window.min(rows).min(cols);
                    let d = dims[s];
                    if ws == rows && ws == cols {
                        t = run(&stage.blocks, t)?;
                    } else {
                        let nw = (rows / ws) * (cols / ws);
                        let win = tile(&t.reshape(&[b, rows, cols, d])?, ws)?.reshape(&[b * nw, ws * ws, d])?;
                        let out = run(&stage.blocks, win)?.reshape(&[b, nw, ws * ws * d])?;
                        t = untile(&out, rows / ws, cols / ws, ws)?.reshape(&[b, rows * cols, d])?;
                    }
                }
                Ok(Encoded {
                    tokens: norm.forward(&t)?,
                    grid: (rows, cols),
                    stride: enc.out_stride(),
                    visible: None,
                    processed_tokens,
                })
            }
        }
    }

    /// Isotropic trunk only: blocks and closing norm over embeddings
    /// `[B, N, D]`, without positions or class token.
    pub fn encode_tokens(&self, tokens: &Tensor<F>) -> Result<Tensor<F>> {
        match &self.encoder {
            Encoder::Isotropic { blocks, norm, .. } => norm.forward(&run(blocks, tokens.clone())?),
            Encoder::Hierarchical { .. } => Err(Error::config("encode_tokens needs an isotropic encoder")),
        }
    }

    /// Predictions for every target unit of the image: `[B, H/unit,
    /// W/unit, features]`.
    pub fn decode_grid(&self, enc: &Encoded<F>) -> Result<Tensor<F>> {
        let d = &self.decoder;
        let width = self.config.decoder.width;
        let (gh, gw) = enc.grid;
        let mut u = self.bridge.forward(&enc.tokens)?;
        if let Some(index) = &enc.visible {
            let fill = d
                .mask_token
                .as_ref()
                .ok_or_else(|| Error::Contract("discard-mode encoding needs a decoder mask token".into()))?;
            u = index.restore(&u, fill)?.add(&sincos_pe(gh, gw, width)?)?;
        }
        let u = d.norm.forward(&run(&d.blocks, u)?)?;
        let out = d.head.forward(&u)?;
        let q = enc.stride / self.config.target.unit;
        untile(&out, gh, gw, q)
    }

    /// Predictions at masked blocks, `[B, k, target_dim]` in raster order.
    pub fn decode(&self, enc: &Encoded<F>, mask: &BlockMask) -> Result<Tensor<F>> {
        let grid = self.decode_grid(enc)?;
        let m = mask.mask_size() / self.config.target.unit;
        mask.gather_masked(&tile(&grid, m)?)
    }

    /// Encoder plus decoder on an already masked input.
    pub fn forward(&self, x: &Tensor<F>, mask: &BlockMask) -> Result<Tensor<F>> {
        let enc = self.encode(x, mask)?;
        self.decode(&enc, mask)
    }

    /// Masks clean input, then runs [`Self::forward`].
    pub fn predict(&self, clean: &Tensor<F>, mask: &BlockMask) -> Result<Tensor<F>> {
        self.forward(&self.mask_input(clean, mask)?, mask)
    }

    /// Grows a truncated encoder back to `full_depth` blocks. Existing
    /// parameters are carried over bit-exactly; the added blocks are freshly
    /// initialized.
    pub fn reinit_truncated(&self, full_depth: usize) -> Result<ModelBundle<F>> {
        let mut config = self.config.clone();
        let current: usize = config.encoder.effective_depths().iter().sum();
        if full_depth < current {
            return Err(Error::config(format!(
                "cannot shrink from {current} to {full_depth} blocks"
            )));
        }
        match config.encoder.family {
            EncoderFamily::Isotropic => config.encoder.depth = config.encoder.depth.max(full_depth),
            EncoderFamily::Hierarchical => {
                if full_depth > config.encoder.full_depth() {
                    return Err(Error::config(format!(
                        "hierarchical encoder holds at most {} blocks",
                        config.encoder.full_depth()
                    )));
                }
            }
        }
        config.encoder.truncate_to = (full_depth < config.encoder.full_depth()).then_some(full_depth);
        let fresh = ModelBundle::new(config, rng::derive(self.seed, &[0x7265_696e]))?;
        for (name, t) in &fresh.params {
            if let Some(old) = self.param(name) {
                t.set_data(&old.data())?;
            }
        }
        Ok(ModelBundle { seed: self.seed, ..fresh })
    }

    /// Parameters as `f32` records for a checkpoint.
    pub fn state(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect()
    }

    /// Loads every registered parameter from `records`; extra records are
    /// ignored, missing or misshapen ones are errors.
    pub fn load_state(&self, records: &[(String, Tensor<f32>)]) -> Result<()> {
        for (name, t) in &self.params {
            let (_, src) = records
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    reason: format!("missing parameter {name}"),
                })?;
            if src.shape() != t.shape() {
                return Err(Error::Format {
                    what: "checkpoint",
                    reason: format!("{name}: shape {:?}, model expects {:?}", src.shape(), t.shape()),
                });
            }
            let values: Vec<F> = src.data().iter().map(|&v| F::of(v as f64)).collect();
            t.set_data(&values)?;
        }
        Ok(())
    }
}
