use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// 2-d sine-cosine position table `[grid_h * grid_w, dim]`, raster order.
/// The first half of each row encodes the row index, the second half the
/// column index; each half is `[sin(p * w_i), cos(p * w_i)]` with
/// `w_i = 10000^(-i / (dim / 4))`.
pub fn sincos_pe<F: Element>(grid_h: usize, grid_w: usize, dim: usize) -> Result<Tensor<F>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::config(format!("sine-cosine embedding needs dim % 4 == 0, got {dim}")));
    }
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 10000f64.powf(-(i as f64) / quarter as f64)).collect();
    let mut data = Vec::with_capacity(grid_h * grid_w * dim);
    for y in 0..grid_h {
        for x in 0..grid_w {
            for pos in [y as f64, x as f64] {
                data.extend(omega.iter().map(|w| F::of((pos * w).sin())));
                data.extend(omega.iter().map(|w| F::of((pos * w).cos())));
            }
        }
    }
    Tensor::from_vec(&[grid_h * grid_w, dim], data)
}

/// `[B, C, H, W]` to non-overlapping patches `[B, (H/p)(W/p), C*p*p]`, each
/// patch flattened channel-major.
pub fn patchify<F: Element>(x: &Tensor<F>, p: usize) -> Result<Tensor<F>> {
    let s = x.shape();
    if s.len() != 4 || p == 0 || s[2] % p != 0 || s[3] % p != 0 {
        return Err(Error::config(format!("patch size {p} does not tile input {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2] / p, s[3] / p);
    x.reshape(&[b, c, h, p, w, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, h * w, c * p * p])
}

/// Regroups a `[B, rows, cols, e]` grid into `[B, (rows/m)(cols/m), m*m*e]`
/// tiles of `m x m` entries, raster order within and across tiles.
pub(crate) fn tile<F: Element>(x: &Tensor<F>, m: usize) -> Result<Tensor<F>> {
    let s = x.shape();
    let (b, r, c, e) = (s[0], s[1], s[2], s[3]);
    if m == 1 {
        return x.reshape(&[b, r * c, e]);
    }
    x.reshape(&[b, r / m, m, c / m, m, e])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, (r / m) * (c / m), m * m * e])
}

/// Inverse of [`tile`]: `[B, rows * cols, q*q*e]` to `[B, rows*q, cols*q, e]`.
pub(crate) fn untile<F: Element>(x: &Tensor<F>, rows: usize, cols: usize, q: usize) -> Result<Tensor<F>> {
    let s = x.shape();
    let (b, e) = (s[0], s[2] / (q * q));
    if q == 1 {
        return x.reshape(&[b, rows, cols, e]);
    }
    x.reshape(&[b, rows, cols, q, q, e])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, rows * q, cols * q, e])
}
