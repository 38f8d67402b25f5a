//! Block-wise random masking.
//!
//! A [`BlockMask`] partitions each image into `mask_size` squares and marks
//! exactly `round(ratio * blocks)` of them as masked per sample. The masked
//! input is `X * S + M * (1 - S)` where `S` is the nearest-neighbor expansion
//! of the block grid and `M` the mask token.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLevel {
    /// Mask raw pixels before patch embedding.
    Image,
    /// Replace patch embeddings after the stem.
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Block side in pixels.
    pub mask_size: usize,
    pub ratio: f64,
    pub level: MaskLevel,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            mask_size: 16,
            ratio: 0.75,
            level: MaskLevel::Image,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mask_size == 0 {
            return Err(Error::config("mask_size must be > 0"));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::config(format!("mask ratio must be in (0, 1), got {}", self.ratio)));
        }
        Ok(())
    }

    /// Block grid `(rows, cols)` for an image of `height x width`.
    pub fn grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if height % self.mask_size != 0 || width % self.mask_size != 0 {
            return Err(Error::config(format!(
                "mask_size {} does not divide resolution {height}x{width}",
                self.mask_size
            )));
        }
        Ok((height / self.mask_size, width / self.mask_size))
    }

    /// Masked blocks per sample out of `blocks`; rejects masks that would
    /// hide nothing or everything.
    pub fn masked_count(&self, blocks: usize) -> Result<usize> {
        self.validate()?;
        let k = (self.ratio * blocks as f64).round() as usize;
        if k == 0 || k >= blocks {
            return Err(Error::config(format!(
                "ratio {} over {blocks} blocks masks {k}; need 0 < k < {blocks}",
                self.ratio
            )));
        }
        Ok(k)
    }
}

/// Per-sample block visibility, raster order, `true` = visible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    batch: usize,
    rows: usize,
    cols: usize,
    mask_size: usize,
    visible: Vec<bool>,
}

impl BlockMask {
    pub fn from_grid(batch: usize, rows: usize, cols: usize, mask_size: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != batch * rows * cols {
            return Err(Error::dim(
                "block_mask",
                format!("{} flags for {batch}x{rows}x{cols}", visible.len()),
            ));
        }
        if mask_size == 0 || rows == 0 || cols == 0 {
            return Err(Error::dim("block_mask", "empty grid"));
        }
        Ok(BlockMask {
            batch,
            rows,
            cols,
            mask_size,
            visible,
        })
    }

    pub fn all_visible(batch: usize, rows: usize, cols: usize, mask_size: usize) -> Self {
        BlockMask {
            batch,
            rows,
            cols,
            mask_size,
            visible: vec![true; batch * rows * cols],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn blocks(&self) -> usize {
        self.rows * self.cols
    }

    pub fn mask_size(&self) -> usize {
        self.mask_size
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.rows * self.mask_size, self.cols * self.mask_size)
    }

    pub fn sample(&self, b: usize) -> &[bool] {
        &self.visible[b * self.blocks()..(b + 1) * self.blocks()]
    }

    pub fn is_visible(&self, b: usize, block: usize) -> bool {
        self.sample(b)[block]
    }

    pub fn masked_count(&self, b: usize) -> usize {
        self.sample(b).iter().filter(|v| !**v).count()
    }

    pub fn visible_indices(&self, b: usize) -> Vec<usize> {
        (0..self.blocks()).filter(|&i| self.sample(b)[i]).collect()
    }

    pub fn masked_indices(&self, b: usize) -> Vec<usize> {
        (0..self.blocks()).filter(|&i| !self.sample(b)[i]).collect()
    }

    /// Masked count shared by every sample, if it is uniform.
    pub fn uniform_masked_count(&self) -> Result<usize> {
        let k = self.masked_count(0);
        if (1..self.batch).any(|b| self.masked_count(b) != k) {
            return Err(Error::dim("block_mask", "masked count differs across samples"));
        }
        Ok(k)
    }

    /// The same mask on a grid `factor` times finer (blocks of
    /// `mask_size / factor`).
    pub fn refine(&self, factor: usize) -> Result<BlockMask> {
        if factor == 0 || self.mask_size % factor != 0 {
            return Err(Error::config(format!(
                "cannot split {}-pixel blocks by {factor}",
                self.mask_size
            )));
        }
        let (rows, cols) = (self.rows * factor, self.cols * factor);
        let mut visible = Vec::with_capacity(self.batch * rows * cols);
        for b in 0..self.batch {
            let s = self.sample(b);
            for r in 0..rows {
                for c in 0..cols {
                    visible.push(s[(r / factor) * self.cols + c / factor]);
                }
            }
        }
        BlockMask::from_grid(self.batch, rows, cols, self.mask_size / factor, visible)
    }

    /// Mask at the granularity of `token`-pixel tokens: refined when blocks
    /// span several tokens, unchanged when they coincide.
    pub fn at_token_stride(&self, token: usize) -> Result<BlockMask> {
        if token == 0 || self.mask_size % token != 0 {
            return Err(Error::config(format!(
                "mask_size {} is not a multiple of token stride {token}",
                self.mask_size
            )));
        }
        self.refine(self.mask_size / token)
    }

    /// `S` as `[B, 1, H, W]` with ones on visible pixels.
    pub fn pixel_mask<F: Element>(&self) -> Tensor<F> {
        let (h, w) = self.resolution();
        let mut data = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            let s = self.sample(b);
            for y in 0..h {
                let row = (y / self.mask_size) * self.cols;
                for x in 0..w {
                    data.push(if s[row + x / self.mask_size] { F::one() } else { F::zero() });
                }
            }
        }
        Tensor::from_vec(&[self.batch, 1, h, w], data).expect("mask layout")
    }

    /// Block visibility as `[B, blocks, 1]` ones/zeros.
    pub fn token_mask<F: Element>(&self) -> Tensor<F> {
        let data = self.visible.iter().map(|&v| if v { F::one() } else { F::zero() }).collect();
        Tensor::from_vec(&[self.batch, self.blocks(), 1], data).expect("mask layout")
    }

    /// Rows of `x: [B, blocks, D]` at masked blocks, `[B, k, D]` in raster
    /// order.
    pub fn gather_masked<F: Element>(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let k = self.uniform_masked_count()?;
        self.gather(x, k, |b| self.masked_indices(b), "gather_masked")
    }

    fn gather<F: Element>(
        &self,
        x: &Tensor<F>,
        k: usize,
        pick: impl Fn(usize) -> Vec<usize>,
        op: &'static str,
    ) -> Result<Tensor<F>> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.batch || s[1] != self.blocks() {
            return Err(Error::dim(
                op,
                format!("expected [{}, {}, D], got {s:?}", self.batch, self.blocks()),
            ));
        }
        let n = self.blocks();
        let flat: Vec<usize> = (0..self.batch).flat_map(|b| pick(b).into_iter().map(move |i| b * n + i)).collect();
        let d = s[2];
        x.reshape(&[self.batch * n, d])?.index_select(0, &flat)?.reshape(&[self.batch, k, d])
    }
}

/// Draws an independent exactly-k mask for each sample.
pub fn sample_mask(batch: usize, resolution: (usize, usize), cfg: &MaskConfig, seed: u64) -> Result<BlockMask> {
    let (rows, cols) = cfg.grid(resolution.0, resolution.1)?;
    let n = rows * cols;
    let k = cfg.masked_count(n)?;
    let mut visible = vec![true; batch * n];
    let mut order: Vec<usize> = (0..n).collect();
    for b in 0..batch {
        let mut rng = rng::stream(seed, &[0x6d61736b, b as u64]);
        order.shuffle(&mut rng);
        for &i in &order[..k] {
            visible[b * n + i] = false;
        }
    }
    BlockMask::from_grid(batch, rows, cols, cfg.mask_size, visible)
}

/// `[M]`: an RGB value (`[3, 1, 1]`, image level) or an embedding
/// (`[D]`, patch level).
#[derive(Debug, Clone)]
pub struct MaskToken<F: Element = f32> {
    pub value: Tensor<F>,
    pub learnable: bool,
}

impl<F: Element> MaskToken<F> {
    /// Zero-initialized RGB token.
    pub fn image(learnable: bool) -> Self {
        Self::zeros(&[3, 1, 1], learnable)
    }

    /// Embedding token drawn from N(0, 0.02²) when learnable, zeros otherwise.
    pub fn embedding(dim: usize, learnable: bool, seed: u64) -> Self {
        if !learnable {
            return Self::zeros(&[dim], false);
        }
        let mut rng = rng::stream(seed, &[0x6d746f6b]);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let data = (0..dim).map(|_| F::of(normal.sample(&mut rng))).collect();
        MaskToken {
            value: Tensor::parameter(&[dim], data).expect("token shape"),
            learnable,
        }
    }

    fn zeros(shape: &[usize], learnable: bool) -> Self {
        let n = shape.iter().product();
        let value = if learnable {
            Tensor::parameter(shape, vec![F::zero(); n]).expect("token shape")
        } else {
            Tensor::zeros(shape)
        };
        MaskToken { value, learnable }
    }

    pub fn level(&self) -> MaskLevel {
        if self.value.rank() == 3 {
            MaskLevel::Image
        } else {
            MaskLevel::Patch
        }
    }
}

/// `X * S + M * (1 - S)` on `[B, 3, H, W]` images.
pub fn apply_mask<F: Element>(images: &Tensor<F>, mask: &BlockMask, token: &MaskToken<F>) -> Result<Tensor<F>> {
    let s = images.shape();
    let (h, w) = mask.resolution();
    if s != [mask.batch(), 3, h, w] {
        return Err(Error::dim(
            "apply_mask",
            format!("images {s:?} vs mask {}x3x{h}x{w}", mask.batch()),
        ));
    }
    if token.value.shape() != [3, 1, 1] {
        return Err(Error::dim(
            "apply_mask",
            format!("image-level token must be [3, 1, 1], got {:?}", token.value.shape()),
        ));
    }
    let keep = mask.pixel_mask::<F>();
    blend(images, &keep, &token.value)
}

/// Replaces embeddings `[B, N, D]` at masked positions with the `[D]` token.
/// The mask grid must coincide with the token grid.
pub fn apply_mask_tokens<F: Element>(embeddings: &Tensor<F>, mask: &BlockMask, token: &MaskToken<F>) -> Result<Tensor<F>> {
    let s = embeddings.shape();
    if s.len() != 3 || s[0] != mask.batch() || s[1] != mask.blocks() {
        return Err(Error::dim(
            "apply_mask_tokens",
            format!("embeddings {s:?} vs mask {}x{}", mask.batch(), mask.blocks()),
        ));
    }
    if token.value.shape() != [s[2]] {
        return Err(Error::dim(
            "apply_mask_tokens",
            format!("token {:?} vs embed dim {}", token.value.shape(), s[2]),
        ));
    }
    blend(embeddings, &mask.token_mask::<F>(), &token.value)
}

fn blend<F: Element>(x: &Tensor<F>, keep: &Tensor<F>, token: &Tensor<F>) -> Result<Tensor<F>> {
    let hide = keep.scale(F::of(-1.0))?.add_scalar(F::one())?;
    let filled = Tensor::ones(x.shape()).mul(token)?.mul(&hide)?;
    x.mul(keep)?.add(&filled)
}

/// Where each sample's visible tokens came from, enough to rebuild the full
/// sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibleIndex {
    batch: usize,
    tokens: usize,
    visible: Vec<Vec<usize>>,
}

impl VisibleIndex {
    pub fn visible(&self, b: usize) -> &[usize] {
        &self.visible[b]
    }

    pub fn visible_count(&self) -> usize {
        self.visible.first().map_or(0, Vec::len)
    }

    /// Full `[B, N, D]` sequence from visible rows `[B, N_vis, D]`, with
    /// `fill` (`[D]`) at every hidden position.
    pub fn restore<F: Element>(&self, visible: &Tensor<F>, fill: &Tensor<F>) -> Result<Tensor<F>> {
        let s = visible.shape();
        let nv = self.visible_count();
        if s.len() != 3 || s[0] != self.batch || s[1] != nv {
            return Err(Error::dim(
                "restore",
                format!("expected [{}, {nv}, D], got {s:?}", self.batch),
            ));
        }
        let d = s[2];
        if fill.shape() != [d] {
            return Err(Error::dim("restore", format!("fill {:?} vs dim {d}", fill.shape())));
        }
        let hidden = self.tokens - nv;
        let rows = visible.reshape(&[self.batch * nv, d])?;
        let mut parts = vec![rows];
        if hidden > 0 {
            parts.push(Tensor::ones(&[self.batch * hidden, d]).mul(fill)?);
        }
        let stacked = Tensor::concat(&parts, 0)?;
        // source row of every output position
        let mut order = Vec::with_capacity(self.batch * self.tokens);
        for b in 0..self.batch {
            let mut next_hidden = self.batch * nv + b * hidden;
            let mut vis = self.visible[b].iter().enumerate().peekable();
            for i in 0..self.tokens {
                match vis.peek() {
                    Some(&(j, &v)) if v == i => {
                        order.push(b * nv + j);
                        vis.next();
                    }
                    _ => {
                        order.push(next_hidden);
                        next_hidden += 1;
                    }
                }
            }
        }
        stacked.index_select(0, &order)?.reshape(&[self.batch, self.tokens, d])
    }
}

/// Visible rows of `[B, N, D]` in raster order (the mask grid must coincide
/// with the token grid).
pub fn select_visible<F: Element>(embeddings: &Tensor<F>, mask: &BlockMask) -> Result<(Tensor<F>, VisibleIndex)> {
    let k = mask.uniform_masked_count()?;
    let nv = mask.blocks() - k;
    let out = mask.gather(embeddings, nv, |b| mask.visible_indices(b), "select_visible")?;
    let index = VisibleIndex {
        batch: mask.batch(),
        tokens: mask.blocks(),
        visible: (0..mask.batch()).map(|b| mask.visible_indices(b)).collect(),
    };
    Ok((out, index))
}
