//! Central-difference gradient checking in `f64`.

use rand::seq::index::sample;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Step used for the central differences.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Gradient magnitude below which errors are measured absolutely.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
    /// Where it occurred: input index and flat element index.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the reverse-mode gradient of the scalar `loss()` with respect to
/// each of `inputs` against `(f(x + h) - f(x - h)) / 2h`. At most `per_input`
/// elements of each input are probed (chosen with `seed`); pass `usize::MAX`
/// to probe all of them.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    loss: impl Fn() -> Result<Tensor<f64>>,
    per_input: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    for t in inputs {
        if !t.requires_grad() || !t.is_leaf() {
            return Err(Error::Contract("gradcheck inputs must be trainable leaves".into()));
        }
        t.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (k, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let picks: Vec<usize> = if per_input >= n {
            (0..n).collect()
        } else {
            let mut r = rng::stream(seed, &[k as u64]);
            let mut v = sample(&mut r, n, per_input).into_vec();
            v.sort_unstable();
            v
        };
        let mut values = t.to_vec();
        for i in picks {
            let x = values[i];
            values[i] = x + GRADCHECK_STEP;
            t.set_data(&values)?;
            let up = loss()?.item();
            values[i] = x - GRADCHECK_STEP;
            t.set_data(&values)?;
            let down = loss()?.item();
            values[i] = x;
            t.set_data(&values)?;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst = (k, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
