//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle (reference counted) onto a node of the
//! computation graph. Operations that touch at least one tensor with
//! `requires_grad` record a backward rule; [`Tensor::backward`] walks the
//! recorded nodes in reverse creation order and then consumes them.
//!
//! Tensors are `!Send`: a graph lives in one execution context. Copy the data
//! out with [`Tensor::to_vec`] to move values elsewhere.

mod autograd;
mod dump;
mod gradcheck;
mod layout;
mod linalg;
mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub use autograd::Tape;
pub use dump::{read_raw, write_raw};
pub use gradcheck::{gradcheck, GradCheckReport, GRADCHECK_STEP};

/// Floating point scalar a tensor can hold. `f32` is the working precision;
/// `f64` exists for gradient checking.
pub trait Element:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn<F> = Box<dyn Fn(&[F]) -> Vec<Option<Vec<F>>>>;

pub(crate) struct Op<F: Element> {
    name: &'static str,
    parents: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

pub(crate) struct Node<F: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    op: RefCell<Option<Op<F>>>,
    consumed: Cell<bool>,
}

pub struct Tensor<F: Element = f32>(Rc<Node<F>>);

impl<F: Element> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Element> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Element> Tensor<F> {
    fn from_parts(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, op: Option<Op<F>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: RefCell::new(op),
            consumed: Cell::new(false),
        }))
    }

    /// Constant tensor. Fails if `data` does not fill `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.into_parameter())
    }

    fn into_parameter(self) -> Self {
        let data = self.0.data.borrow().clone();
        Self::from_parts(self.0.shape.clone(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(Vec::new(), vec![value], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.borrow().is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites values in place. Used by optimizers and checkpoint loading.
    pub fn set_data(&self, values: &[F]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::dim(
                "set_data",
                format!("expected {} values, got {}", data.len(), values.len()),
            ));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn with_data_mut<R>(&self, f: impl FnOnce(&mut [F]) -> R) -> R {
        f(&mut self.0.data.borrow_mut())
    }

    /// Constant copy with no graph history.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Same values in another precision; the result is a constant.
    pub fn cast<G: Element>(&self) -> Tensor<G> {
        let data = self.0.data.borrow().iter().map(|v| G::of(v.f64())).collect();
        Tensor::from_parts(self.0.shape.clone(), data, false, None)
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }
}

/// Min / max / mean / non-finite count, for diagnostics.
pub(crate) fn describe<F: Element>(values: &[F]) -> String {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut bad = 0usize;
    for v in values {
        let v = v.f64();
        if !v.is_finite() {
            bad += 1;
            continue;
        }
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let n = values.len().saturating_sub(bad).max(1);
    format!(
        "n={} min={min:.4e} max={max:.4e} mean={:.4e} nonfinite={bad}",
        values.len(),
        sum / n as f64
    )
}
