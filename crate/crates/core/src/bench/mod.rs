//! Analytic cost model and measured throughput.
//!
//! FLOPs count multiply-adds of the transformer blocks only (stems, patch
//! merging and heads are ignored): per block `4 N D^2 + 2 N M D` for
//! attention, where `M` is the number of keys each query sees (`N` for global
//! attention, the window area otherwise), and `8 N D^2` for the 4x MLP.

mod report;
mod throughput;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{parse_csv, report_emit, write_report, ReportFormat, ReportRow, COLUMNS};
pub use throughput::{throughput_run, PhaseTimes, Throughput};

use crate::error::{Error, Result};
use crate::masking::MaskConfig;
use crate::models::{DecoderConfig, EncoderConfig, EncoderFamily};

/// Resolution the full-input regimes are compared at.
pub const REFERENCE_RESOLUTION: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every token, masked or not, goes through the encoder.
    MimFull,
    /// Only visible tokens are encoded.
    MaeDiscard,
    /// Every token at a reduced input resolution.
    FastmimLowres,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::MimFull, Regime::MaeDiscard, Regime::FastmimLowres];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::MimFull => "mim_full",
            Regime::MaeDiscard => "mae_discard",
            Regime::FastmimLowres => "fastmim_lowres",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::config(format!("unknown regime {s:?}")))
    }
}

/// Headline numbers of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeCost {
    pub regime: Regime,
    pub resolution: usize,
    /// Tokens entering the first encoder block, class token excluded.
    pub encoder_tokens: usize,
    pub total_flops: f64,
    /// `total_flops` relative to `mim_full` at the reference resolution.
    pub relative_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub regime: Regime,
    pub resolution: usize,
    /// Patch tokens per encoder stage (one stage for isotropic encoders).
    pub token_counts: Vec<usize>,
    /// Tokens actually processed by the first encoder block, class token
    /// included.
    pub encoder_tokens: usize,
    pub decoder_tokens: usize,
    pub encoder_blocks: usize,
    pub attention_flops: f64,
    pub mlp_flops: f64,
    pub total_flops: f64,
    /// Activations kept per image for the backward pass (estimate).
    pub activation_elements: f64,
    /// `mim_full` and `mae_discard` at the reference resolution next to
    /// `fastmim_lowres` at this report's resolution.
    pub comparisons: Vec<RegimeCost>,
}

impl CostReport {
    /// Fraction of patch tokens saved relative to `other` (first stage).
    pub fn token_reduction_vs(&self, other: &CostReport) -> f64 {
        1.0 - self.token_counts[0] as f64 / other.token_counts[0] as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    attention: f64,
    mlp: f64,
    activations: f64,
}

impl Tally {
    /// One block over `n` queries of width `d`, each attending to `m` keys.
    fn block(&mut self, n: usize, m: usize, d: usize, heads: usize) {
        let (n, m, d) = (n as f64, m as f64, d as f64);
        self.attention += 4.0 * n * d * d + 2.0 * n * m * d;
        self.mlp += 8.0 * n * d * d;
        // two norms, qkv, attention output, projection, residuals: ~10 ND;
        // MLP hidden before and after GELU: 8 ND; attention probabilities.
        self.activations += 18.0 * n * d + heads as f64 * n * m;
    }
}

/// Visible tokens under discard-style encoding: `ceil((1 - ratio) * n)`.
pub fn visible_tokens(n: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn single_cost(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    resolution: usize,
    mask: &MaskConfig,
    regime: Regime,
) -> Result<(CostReport, Tally)> {
    enc.validate()?;
    dec.validate()?;
    enc.check_resolution(resolution, resolution)?;
    if regime == Regime::MaeDiscard && enc.family != EncoderFamily::Isotropic {
        return Err(Error::config("mae_discard needs an isotropic encoder"));
    }
    let depths = enc.effective_depths();
    let dims = enc.stage_dims();
    let heads = enc.stage_heads();
    let grids = enc.stage_grids(resolution, resolution);
    let token_counts: Vec<usize> = grids.iter().map(|(r, c)| r * c).collect();
    let mut tally = Tally::default();
    let cls = usize::from(enc.use_class_token && enc.family == EncoderFamily::Isotropic);
    let encoder_tokens = match regime {
        Regime::MaeDiscard => visible_tokens(token_counts[0], mask.ratio) + cls,
        _ => token_counts[0] + cls,
    };
    match enc.family {
        EncoderFamily::Isotropic => {
            for _ in 0..depths[0] {
                tally.block(encoder_tokens, encoder_tokens, dims[0], heads[0]);
            }
        }
        EncoderFamily::Hierarchical => {
            let window = enc.window_for(resolution, resolution);
            for (s, &(r, c)) in grids.iter().enumerate() {
                let ws = window.min(r).min(c);
                for _ in 0..depths[s] {
                    tally.block(r * c, ws * ws, dims[s], heads[s]);
                }
            }
        }
    }
    let decoder_tokens = *token_counts.last().expect("one stage");
    for _ in 0..dec.blocks {
        tally.block(decoder_tokens, decoder_tokens, dec.width, dec.heads());
    }
    let report = CostReport {
        regime,
        resolution,
        token_counts,
        encoder_tokens,
        decoder_tokens,
        encoder_blocks: depths.iter().sum(),
        attention_flops: tally.attention,
        mlp_flops: tally.mlp,
        total_flops: tally.attention + tally.mlp,
        activation_elements: tally.activations,
        comparisons: Vec::new(),
    };
    Ok((report, tally))
}

/// Token, FLOP and activation estimates for one forward pass of one image.
pub fn cost_model(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    resolution: usize,
    mask: &MaskConfig,
    regime: Regime,
) -> Result<CostReport> {
    let (mut report, _) = single_cost(enc, dec, resolution, mask, regime)?;
    let (reference, _) = single_cost(enc, dec, REFERENCE_RESOLUTION, mask, Regime::MimFull)?;
    let mut comparisons = Vec::new();
    for r in Regime::ALL {
        if r == Regime::MaeDiscard && enc.family != EncoderFamily::Isotropic {
            continue;
        }
        let res = if r == Regime::FastmimLowres { resolution } else { REFERENCE_RESOLUTION };
        let (c, _) = single_cost(enc, dec, res, mask, r)?;
        comparisons.push(RegimeCost {
            regime: r,
            resolution: res,
            encoder_tokens: c.encoder_tokens - usize::from(enc.use_class_token && enc.family == EncoderFamily::Isotropic),
            total_flops: c.total_flops,
            relative_flops: c.total_flops / reference.total_flops,
        });
    }
    report.comparisons = comparisons;
    Ok(report)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::dim("spearman", format!("need two equal series of >= 2, got {} and {}", x.len(), y.len())));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = r;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric {
            op: "spearman",
            stats: "constant series".into(),
        });
    }
    Ok(sxy / (sxx * syy).sqrt())
}
