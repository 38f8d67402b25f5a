use super::{Element, Tensor};
use crate::error::{Error, Result};

/// How `rhs` maps onto `lhs` under right-aligned broadcasting.
enum Broadcast {
    Same,
    /// rhs repeats every `len` elements of lhs.
    Suffix(usize),
    /// General case: per-lhs-element rhs offset.
    Strided(Vec<usize>),
}

impl Broadcast {
    fn plan(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        if lhs == rhs {
            return Ok(Broadcast::Same);
        }
        let bad = || {
            Error::dim(
                op,
                format!("cannot broadcast {rhs:?} onto {lhs:?} (right-aligned, rhs dims must match or be 1)"),
            )
        };
        // strip leading unit dims of rhs
        let first = rhs.iter().position(|&d| d != 1).unwrap_or(rhs.len());
        let core = &rhs[first..];
        if core.len() > lhs.len() {
            return Err(bad());
        }
        let offset = lhs.len() - core.len();
        if core == &lhs[offset..] {
            return Ok(Broadcast::Suffix(core.iter().product::<usize>().max(1)));
        }
        for (r, l) in core.iter().zip(&lhs[offset..]) {
            if *r != *l && *r != 1 {
                return Err(bad());
            }
        }
        let mut rstrides = vec![0usize; lhs.len()];
        let mut acc = 1;
        for i in (0..core.len()).rev() {
            if core[i] != 1 {
                rstrides[offset + i] = acc;
            }
            acc *= core[i];
        }
        let n: usize = lhs.iter().product();
        let mut idx = vec![0usize; lhs.len()];
        let mut map = Vec::with_capacity(n);
        let mut off = 0usize;
        for _ in 0..n {
            map.push(off);
            for d in (0..lhs.len()).rev() {
                idx[d] += 1;
                off += rstrides[d];
                if idx[d] < lhs[d] {
                    break;
                }
                off -= rstrides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok(Broadcast::Strided(map))
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(len) => i % len,
            Broadcast::Strided(map) => map[i],
        }
    }

    /// Sums a lhs-shaped gradient down to the rhs shape.
    fn reduce<F: Element>(&self, grad: &[F], rhs_len: usize) -> Vec<F> {
        match self {
            Broadcast::Same => grad.to_vec(),
            _ => {
                let mut out = vec![F::zero(); rhs_len];
                for (i, g) in grad.iter().enumerate() {
                    out[self.at(i)] += *g;
                }
                out
            }
        }
    }
}

impl<F: Element> Tensor<F> {
    fn binary(
        &self,
        rhs: &Tensor<F>,
        name: &'static str,
        f: impl Fn(F, F) -> F,
        dl: impl Fn(F, F, F) -> F + 'static,
        dr: impl Fn(F, F, F) -> F + 'static,
    ) -> Result<Tensor<F>> {
        let plan = Broadcast::plan(name, self.shape(), rhs.shape())?;
        let out = {
            let a = self.data();
            let b = rhs.data();
            a.iter().enumerate().map(|(i, &x)| f(x, b[plan.at(i)])).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::record(name, self.shape().to_vec(), out, &[self, rhs], move |g| {
            let ad = a.data();
            let bd = b.data();
            let ga = a
                .requires_grad()
                .then(|| g.iter().enumerate().map(|(i, &gi)| dl(gi, ad[i], bd[plan.at(i)])).collect());
            let gb = b.requires_grad().then(|| {
                let full: Vec<F> =
                    g.iter().enumerate().map(|(i, &gi)| dr(gi, ad[i], bd[plan.at(i)])).collect();
                plan.reduce(&full, bd.len())
            });
            vec![ga, gb]
        })
    }

    /// Elementwise sum; `rhs` broadcasts onto `self` from the right.
    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, "add", |a, b| a + b, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, "sub", |a, b| a - b, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        self.binary(rhs, "mul", |a, b| a * b, |g, _, b| g * b, |g, a, _| g * a)
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(F) -> F,
        df: impl Fn(F, F) -> F + 'static,
    ) -> Result<Tensor<F>> {
        let out: Vec<F> = self.data().iter().map(|&x| f(x)).collect();
        let a = self.clone();
        Tensor::record(name, self.shape().to_vec(), out, &[self], move |g| {
            let ad = a.data();
            vec![Some(g.iter().zip(ad.iter()).map(|(&gi, &x)| df(gi, x)).collect())]
        })
    }

    pub fn scale(&self, s: F) -> Result<Tensor<F>> {
        self.unary("scale", |x| x * s, move |g, _| g * s)
    }

    pub fn add_scalar(&self, c: F) -> Result<Tensor<F>> {
        self.unary("add_scalar", |x| x + c, |g, _| g)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor<F>> {
        let k = F::of((2.0 / std::f64::consts::PI).sqrt());
        let c = F::of(0.044715);
        let half = F::of(0.5);
        let three = F::of(3.0);
        self.unary(
            "gelu",
            move |x| half * x * (F::one() + (k * (x + c * x * x * x)).tanh()),
            move |g, x| {
                let t = (k * (x + c * x * x * x)).tanh();
                let dt = (F::one() - t * t) * k * (F::one() + three * c * x * x);
                g * (half * (F::one() + t) + half * x * dt)
            },
        )
    }

    fn last_dim(&self, op: &'static str) -> Result<usize> {
        match self.shape().last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(Error::dim(op, format!("needs a non-empty last axis, got {:?}", self.shape()))),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor<F>> {
        let d = self.last_dim("softmax")?;
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let y = out.clone();
        Tensor::record("softmax", self.shape().to_vec(), out, &[self], move |g| {
            let mut gx = vec![F::zero(); g.len()];
            for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layernorm(&self, eps: f64) -> Result<Tensor<F>> {
        if eps <= 0.0 {
            return Err(Error::config(format!("layernorm eps must be > 0, got {eps}")));
        }
        let d = self.last_dim("layernorm")?;
        let n = F::of(d as f64);
        let eps = F::of(eps);
        let mut out = self.to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let r = F::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        let y = out.clone();
        Tensor::record("layernorm", self.shape().to_vec(), out, &[self], move |g| {
            let mut gx = vec![F::zero(); g.len()];
            for (((gr, yr), out), &r) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)).zip(&inv_std) {
                let mg = gr.iter().copied().sum::<F>() / n;
                let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<F>() / n;
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = r * (gi - mg - yi * mgy);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn sum(&self) -> Result<Tensor<F>> {
        let s: F = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::record("sum", Vec::new(), vec![s], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let s: F = self.data().iter().copied().sum();
        let inv = F::one() / F::of(n as f64);
        Tensor::record("mean", Vec::new(), vec![s * inv], &[self], move |g| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&self, target: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape() != target.shape() {
            return Err(Error::dim(
                "mse",
                format!("shapes differ: {:?} vs {:?}", self.shape(), target.shape()),
            ));
        }
        let n = self.numel();
        if n == 0 {
            return Err(Error::dim("mse", "empty tensor"));
        }
        let inv = F::one() / F::of(n as f64);
        let loss = {
            let a = self.data();
            let b = target.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<F>() * inv
        };
        let (a, b) = (self.clone(), target.clone());
        Tensor::record("mse", Vec::new(), vec![loss], &[self, target], move |g| {
            let two = F::of(2.0) * inv * g[0];
            let ad = a.data();
            let bd = b.data();
            let diff: Vec<F> = ad.iter().zip(bd.iter()).map(|(&x, &y)| two * (x - y)).collect();
            let gb = b.requires_grad().then(|| diff.iter().map(|&v| -v).collect());
            vec![a.requires_grad().then_some(diff), gb]
        })
    }
}
