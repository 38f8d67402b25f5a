use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Element, Tensor};

pub(crate) const LN_EPS: f64 = 1e-6;
pub(crate) const INIT_STD: f64 = 0.02;

/// Stable 64-bit FNV-1a, used to key parameter init streams by name.
fn fnv(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Creates parameters and records them, in creation order, under dotted
/// names. Values depend only on the seed and the name.
pub(crate) struct Registry<'a, F: Element> {
    seed: u64,
    prefix: String,
    out: &'a mut Vec<(String, Tensor<F>)>,
}

impl<'a, F: Element> Registry<'a, F> {
    pub fn new(seed: u64, out: &'a mut Vec<(String, Tensor<F>)>) -> Self {
        Registry {
            seed,
            prefix: String::new(),
            out,
        }
    }

    pub fn scope(&mut self, name: &str) -> Registry<'_, F> {
        Registry {
            seed: self.seed,
            prefix: format!("{}{name}.", self.prefix),
            out: self.out,
        }
    }

    /// Records an externally created parameter.
    pub fn register(&mut self, name: &str, t: &Tensor<F>) {
        self.out.push((format!("{}{name}", self.prefix), t.clone()));
    }

    fn push(&mut self, name: &str, shape: &[usize], data: Vec<F>) -> Tensor<F> {
        let t = Tensor::parameter(shape, data).expect("parameter shape");
        self.out.push((format!("{}{name}", self.prefix), t.clone()));
        t
    }

    /// Normal(0, 0.02²) truncated at two standard deviations.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize]) -> Tensor<F> {
        let full = format!("{}{name}", self.prefix);
        let mut rng = rng::stream(self.seed, &[fnv(&full)]);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STD {
                    break F::of(v);
                }
            })
            .collect();
        self.push(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Tensor<F> {
        let n = shape.iter().product();
        self.push(name, shape, vec![F::of(value); n])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear<F: Element> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Element> Linear<F> {
    pub fn new(reg: &mut Registry<F>, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let mut s = reg.scope(name);
        let weight = s.trunc_normal("weight", &[input, output]);
        let bias = bias.then(|| s.constant("bias", &[output], 0.0));
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm<F: Element> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Element> LayerNorm<F> {
    pub fn new(reg: &mut Registry<F>, name: &str, dim: usize) -> Self {
        let mut s = reg.scope(name);
        LayerNorm {
            gamma: s.constant("weight", &[dim], 1.0),
            beta: s.constant("bias", &[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        x.layernorm(LN_EPS)?.mul(&self.gamma)?.add(&self.beta)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention<F: Element> {
    qkv: Linear<F>,
    proj: Linear<F>,
    heads: usize,
}

impl<F: Element> Attention<F> {
    pub fn new(reg: &mut Registry<F>, name: &str, dim: usize, heads: usize) -> Self {
        let mut s = reg.scope(name);
        Attention {
            qkv: Linear::new(&mut s, "qkv", dim, 3 * dim, true),
            proj: Linear::new(&mut s, "proj", dim, dim, true),
            heads,
        }
    }

    /// Full self-attention within each row of `[B, N, D]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let s = x.shape();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        let hd = d / h;
        let qkv = self.qkv.forward(x)?.reshape(&[b, n, 3, h, hd])?;
        let heads = qkv.permute(&[2, 0, 3, 1, 4])?; // [3, B, H, N, hd]
        let pick = |i: usize| heads.slice(0, i, i + 1)?.reshape(&[b * h, n, hd]);
        let q = pick(0)?.scale(F::of(1.0 / (hd as f64).sqrt()))?;
        let kt = pick(1)?.transpose(1, 2)?;
        let v = pick(2)?;
        let attn = q.bmm(&kt)?.softmax()?;
        let out = attn.bmm(&v)?.reshape(&[b, h, n, hd])?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, d])?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block<F: Element> {
    norm1: LayerNorm<F>,
    attn: Attention<F>,
    norm2: LayerNorm<F>,
    fc1: Linear<F>,
    fc2: Linear<F>,
}

pub(crate) const MLP_RATIO: usize = 4;

impl<F: Element> Block<F> {
    pub fn new(reg: &mut Registry<F>, name: &str, dim: usize, heads: usize) -> Self {
        let mut s = reg.scope(name);
        Block {
            norm1: LayerNorm::new(&mut s, "norm1", dim),
            attn: Attention::new(&mut s, "attn", dim, heads),
            norm2: LayerNorm::new(&mut s, "norm2", dim),
            fc1: Linear::new(&mut s, "mlp.fc1", dim, MLP_RATIO * dim, true),
            fc2: Linear::new(&mut s, "mlp.fc2", MLP_RATIO * dim, dim, true),
        }
    }

    /// Pre-norm transformer block over `[B, N, D]`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let x = x.add(&self.attn.forward(&self.norm1.forward(x)?)?)?;
        let hidden = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu()?;
        x.add(&self.fc2.forward(&hidden)?)
    }
}

pub(crate) fn check_heads(dim: usize, heads: usize, what: &str) -> Result<()> {
    if heads == 0 || dim == 0 || dim % heads != 0 {
        return Err(Error::config(format!("{what}: width {dim} not divisible by {heads} heads")));
    }
    Ok(())
}
