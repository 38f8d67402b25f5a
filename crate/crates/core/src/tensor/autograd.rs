use std::collections::{HashMap, HashSet};

use super::{describe, Element, Op, Tensor};
use crate::error::{Error, Result};

impl<F: Element> Tensor<F> {
    /// Builds the output of an operation, rejecting non-finite values and
    /// recording `backward` when any parent participates in differentiation.
    pub(crate) fn record(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        parents: &[&Tensor<F>],
        backward: impl Fn(&[F]) -> Vec<Option<Vec<F>>> + 'static,
    ) -> Result<Tensor<F>> {
        if data.iter().any(|v| !v.is_finite()) {
            let stats = parents
                .iter()
                .enumerate()
                .map(|(i, p)| format!("input{i}: {}", describe(&p.data())))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Numeric { op: name, stats });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| Op {
            name,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Tensor::from_parts(shape, data, requires_grad, op))
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into
    /// any gradient already present; the recorded graph is consumed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.0.consumed.get() {
            return Err(Error::Contract(
                "backward called twice on the same graph; run a new forward pass first".into(),
            ));
        }
        if self.is_leaf() {
            return Err(Error::Contract(
                "backward called on a tensor with no recorded operations".into(),
            ));
        }

        let tape = Tape::collect(self);
        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);

        for node in &tape.nodes {
            let Some(grad_out) = pending.remove(&node.id()) else {
                continue;
            };
            let op_ref = node.0.op.borrow();
            let op = op_ref.as_ref().expect("tape holds only recorded nodes");
            let grads = (op.backward)(&grad_out);
            debug_assert_eq!(grads.len(), op.parents.len(), "{}", op.name);
            for (parent, grad) in op.parents.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                if parent.is_leaf() {
                    let mut slot = parent.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                        None => *slot = Some(grad),
                    }
                } else {
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                        None => {
                            pending.insert(parent.id(), grad);
                        }
                    }
                }
            }
        }

        for node in &tape.nodes {
            node.0.op.borrow_mut().take();
            node.0.consumed.set(true);
        }
        Ok(())
    }
}

/// Recorded operations reachable from a root, in reverse topological order
/// (root first). Node ids grow monotonically with creation, so sorting by id
/// descending is a valid order.
pub struct Tape<F: Element> {
    nodes: Vec<Tensor<F>>,
}

impl<F: Element> Tape<F> {
    pub fn collect(root: &Tensor<F>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = t.0.op.borrow().as_ref() {
                stack.extend(op.parents.iter().filter(|p| p.requires_grad()).cloned());
            } else {
                continue;
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names, root first.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|n| n.0.op.borrow().as_ref().map_or("leaf", |op| op.name))
            .collect()
    }
}
