//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Norm scales, biases and the learned tokens are not decayed: everything of
/// rank <= 1 plus the class and mask tokens whatever their shape.
pub fn decay_exempt(name: &str, shape: &[usize]) -> bool {
    shape.len() <= 1 || name.ends_with("mask_token") || name.ends_with("cls_token")
}

#[derive(Debug, Clone)]
struct Slot<F> {
    name: String,
    decay: bool,
    m: Vec<F>,
    v: Vec<F>,
}

/// Moment buffers for a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct OptimState<F: Element = f32> {
    pub config: AdamWConfig,
    step: u64,
    slots: Vec<Slot<F>>,
}

impl<F: Element> OptimState<F> {
    pub fn new(config: AdamWConfig, params: &[(String, Tensor<F>)]) -> Self {
        let slots = params
            .iter()
            .map(|(name, t)| Slot {
                name: name.clone(),
                decay: !decay_exempt(name, t.shape()),
                m: vec![F::zero(); t.numel()],
                v: vec![F::zero(); t.numel()],
            })
            .collect();
        OptimState { config, step: 0, slots }
    }

    /// Updates taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn decays(&self, name: &str) -> Option<bool> {
        self.slots.iter().find(|s| s.name == name).map(|s| s.decay)
    }

    fn check(&self, params: &[(String, Tensor<F>)]) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        for (slot, (name, t)) in self.slots.iter().zip(params) {
            if *name != slot.name || t.numel() != slot.m.len() {
                return Err(Error::Contract(format!(
                    "parameter {name} ({} values) does not match optimizer slot {} ({} values)",
                    t.numel(),
                    slot.name,
                    slot.m.len()
                )));
            }
        }
        Ok(())
    }

    /// Moment buffers as named records, `optim.m.<param>` / `optim.v.<param>`.
    pub fn records(&self, params: &[(String, Tensor<F>)]) -> Result<Vec<(String, Tensor<f32>)>> {
        self.check(params)?;
        let mut out = Vec::with_capacity(2 * self.slots.len());
        for (slot, (_, t)) in self.slots.iter().zip(params) {
            for (tag, buf) in [("m", &slot.m), ("v", &slot.v)] {
                let values = buf.iter().map(|x| x.f64() as f32).collect();
                out.push((format!("optim.{tag}.{}", slot.name), Tensor::from_vec(t.shape(), values)?));
            }
        }
        Ok(out)
    }

    /// Restores moments written by [`Self::records`] and the step count.
    pub fn load(&mut self, step: u64, records: &[(String, Tensor<f32>)]) -> Result<()> {
        for slot in &mut self.slots {
            for (tag, buf) in [("m", &mut slot.m), ("v", &mut slot.v)] {
                let key = format!("optim.{tag}.{}", slot.name);
                let src = records
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::Format {
                        what: "checkpoint",
                        reason: format!("missing optimizer record {key}"),
                    })?;
                if src.numel() != buf.len() {
                    return Err(Error::Format {
                        what: "checkpoint",
                        reason: format!("{key}: {} values, expected {}", src.numel(), buf.len()),
                    });
                }
                for (d, s) in buf.iter_mut().zip(src.data().iter()) {
                    *d = F::of(*s as f64);
                }
            }
        }
        self.step = step;
        Ok(())
    }
}

/// One AdamW update at learning rate `lr`. Parameters without a gradient are
/// left alone (their moments do not advance).
pub fn adamw_step<F: Element>(params: &[(String, Tensor<F>)], state: &mut OptimState<F>, lr: f64) -> Result<()> {
    state.check(params)?;
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let (one, eps) = (F::one(), F::of(c.eps));
    let bc1 = F::of(1.0 - c.beta1.powi(t));
    let bc2 = F::of(1.0 - c.beta2.powi(t));
    let lr_f = F::of(lr);
    for (slot, (_, p)) in state.slots.iter_mut().zip(params) {
        let Some(g) = p.grad() else { continue };
        let shrink = if slot.decay { F::of(1.0 - lr * c.weight_decay) } else { one };
        p.with_data_mut(|w| {
            for i in 0..w.len() {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (one - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                w[i] = w[i] * shrink - lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}
