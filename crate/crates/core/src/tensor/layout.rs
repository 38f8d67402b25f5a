use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output element of `permute(axes)`, the flat source index.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        return vec![0];
    }
    let inner = out_shape[rank - 1];
    let inner_step = step[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let outer = n / inner.max(1);
    for _ in 0..outer {
        for j in 0..inner {
            map.push(base + j * inner_step);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= step[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

impl<F: Element> Tensor<F> {
    fn gather_op(&self, name: &'static str, shape: Vec<usize>, map: Vec<usize>) -> Result<Tensor<F>> {
        let out: Vec<F> = {
            let d = self.data();
            map.iter().map(|&i| d[i]).collect()
        };
        let src_len = self.numel();
        Tensor::record(name, shape, out, &[self], move |g| {
            let mut gx = vec![F::zero(); src_len];
            for (&i, &gi) in map.iter().zip(g) {
                gx[i] += gi;
            }
            vec![Some(gx)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape()),
            ));
        }
        let out = self.to_vec();
        Tensor::record("reshape", shape.to_vec(), out, &[self], |g| vec![Some(g.to_vec())])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return self.reshape(&shape);
        }
        let map = permute_map(self.shape(), axes);
        self.gather_op("permute", shape, map)
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<F>> {
        if a >= self.rank() || b >= self.rank() {
            return Err(Error::dim("transpose", format!("axes {a},{b} out of range for {:?}", self.shape())));
        }
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<F>> {
        let shape = self.shape();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::Index {
                op: "slice",
                detail: format!("[{start}, {end}) on axis {axis} of {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = end - start;
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            map.extend(base..base + len * inner);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.gather_op("slice", out_shape, map)
    }

    /// Selects entries along `axis` by index (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<F>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Index {
                op: "index_select",
                detail: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(Error::Index {
                op: "index_select",
                detail: format!("index {bad} out of range for axis {axis} of {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut map = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * shape[axis] + i) * inner;
                map.extend(base..base + inner);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = indices.len();
        self.gather_op("index_select", out_shape, map)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} does not match {:?} off axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (d, &e) in datas.iter().zip(&extents) {
                    out.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor<F>> = parts.iter().collect();
        let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::record("concat", shape, out, &refs, move |g| {
            let mut grads: Vec<Vec<F>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    gp.extend_from_slice(&g[pos..pos + e * inner]);
                    pos += e * inner;
                }
            }
            grads.into_iter().zip(&flags).map(|(g, &f)| f.then_some(g)).collect()
        })
    }
}
