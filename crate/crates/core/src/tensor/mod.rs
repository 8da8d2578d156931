//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Every operation whose inputs require gradients records itself on the
//! graph it produces. Calling [`Tensor::backward`] on a scalar collects the
//! reachable operations into a [`Tape`] (creation order is a topological
//! order) and walks it in reverse, accumulating into each tensor's `grad`.
//!
//! ```
//! use streamtrack::tensor::Tensor;
//!
//! let x = Tensor::param(vec![2.0], &[1]).unwrap();
//! let y = x.mul(&x).unwrap().sum();
//! y.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![4.0]);
//! ```

pub mod gradcheck;
pub mod nn;
mod ops;
pub mod optim;
pub mod params;
mod tape;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use params::{Binding, Grads, Param, ParamStore};
pub use tape::Tape;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Vector-Jacobian product: maps the output gradient to one optional
/// gradient per input. `needs[i]` is false for inputs that do not require
/// gradients; implementations may skip those.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Op {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: RefCell<Option<Vec<f64>>>,
    pub(crate) op: Option<Op>,
}

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if let Some(op) = &self.0.op {
            d.field("op", &op.name);
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("new", &[data.len()], shape));
        }
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("param", &[data.len()], shape));
        }
        Ok(Self::make(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::make(vec![v], vec![], false, None)
    }

    /// Builds an op output. The output requires grad iff any input does; if
    /// none does the op is not recorded.
    pub(crate) fn from_op(name: &'static str, data: Vec<f64>, shape: Vec<usize>, inputs: Vec<Tensor>, backward: BackwardFn) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| Op { name, inputs, backward });
        Self::make(data, shape, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::invalid("dims2", format!("expected rank 2, got {s:?}"))),
        }
    }

    /// Reverse pass from a scalar root. Gradients add onto whatever is
    /// already stored, so two calls without [`Tensor::zero_grad`] sum.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let tape = Tape::record(self);
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in tape.entries().iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(op) = &t.0.op {
                let needs: Vec<bool> = op.inputs.iter().map(|i| i.requires_grad()).collect();
                let grads = (op.backward)(&g, &needs);
                debug_assert_eq!(grads.len(), op.inputs.len(), "{}", op.name);
                for ((input, gi), need) in op.inputs.iter().zip(grads).zip(needs) {
                    let (Some(gi), true) = (gi, need) else {
                        continue;
                    };
                    debug_assert_eq!(gi.len(), input.numel(), "{}", op.name);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), gi);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}
