//! Reconstruction targets and the masked l2 loss.
//!
//! Targets are cut from the clean image into mask blocks, one row per masked
//! block in raster order. Inside a block, units (pixels or HOG cells) are in
//! raster order with their features innermost: RGB for pixels,
//! `channel * bins + bin` for HOG.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::{hog_extract, HogConfig};
use crate::imageio::{normalize, ImageBatch, NormStats};
use crate::masking::BlockMask;
use crate::models::TargetShape;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Pixel,
    Hog,
}

impl TargetKind {
    pub fn shape(&self, hog: &HogConfig) -> TargetShape {
        match self {
            TargetKind::Pixel => TargetShape { unit: 1, features: 3 },
            TargetKind::Hog => TargetShape {
                unit: hog.cell,
                features: hog.cell_dim(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLayout {
    pub mask_size: usize,
    pub shape: TargetShape,
}

impl TargetLayout {
    pub fn dim(&self) -> usize {
        self.shape.block_dim(self.mask_size)
    }
}

#[derive(Debug, Clone)]
pub struct TargetField<F: Element = f32> {
    pub kind: TargetKind,
    /// `[B, masked blocks, dim]`, constant.
    pub data: Tensor<F>,
    pub layout: TargetLayout,
}

/// Rearranges `[B, rows, cols, e]` into mask-block rows and keeps the masked
/// ones.
fn masked_blocks<F: Element>(grid: &Tensor<F>, mask: &BlockMask, m: usize) -> Result<Tensor<F>> {
    let s = grid.shape();
    let (b, r, c, e) = (s[0], s[1], s[2], s[3]);
    let tiles = grid
        .reshape(&[b, r / m, m, c / m, m, e])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, (r / m) * (c / m), m * m * e])?;
    Ok(mask.gather_masked(&tiles)?.detach())
}

/// Targets for the masked blocks of `clean` (unmasked images in `[0, 1]`).
pub fn extract_targets<F: Element>(
    clean: &ImageBatch<F>,
    mask: &BlockMask,
    kind: TargetKind,
    hog: &HogConfig,
    stats: &NormStats,
) -> Result<TargetField<F>> {
    let (h, w) = clean.resolution;
    if mask.resolution() != (h, w) || mask.batch() != clean.len() {
        return Err(Error::dim(
            "extract_targets",
            format!(
                "mask {}x{:?} vs batch {}x{h}x{w}",
                mask.batch(),
                mask.resolution(),
                clean.len()
            ),
        ));
    }
    let shape = kind.shape(hog);
    let ms = mask.mask_size();
    if ms % shape.unit != 0 {
        return Err(Error::config(format!(
            "hog cell {} does not divide mask_size {ms}",
            shape.unit
        )));
    }
    let data = match kind {
        TargetKind::Pixel => {
            let x = normalize(&clean.data, stats)?.permute(&[0, 2, 3, 1])?;
            masked_blocks(&x, mask, ms)?
        }
        TargetKind::Hog => {
            let field = hog_extract(clean, hog)?;
            let cast: Tensor<F> = field.data.cast();
            masked_blocks(&cast, mask, ms / hog.cell)?
        }
    };
    Ok(TargetField {
        kind,
        data,
        layout: TargetLayout { mask_size: ms, shape },
    })
}

/// Mean squared error over every element of the masked-block predictions.
pub fn masked_l2_loss<F: Element>(pred: &Tensor<F>, target: &TargetField<F>) -> Result<Tensor<F>> {
    if pred.shape() != target.data.shape() {
        return Err(Error::dim(
            "masked_l2_loss",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.data.shape()),
        ));
    }
    pred.mse(&target.data)
}
