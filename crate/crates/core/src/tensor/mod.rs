//! Rank-4 tensors with reverse-mode automatic differentiation.
//!
//! Every operation that touches a tensor requiring gradients records a node
//! holding its inputs and a backward closure. Nodes are numbered in creation
//! order, so the graph's topological order is simply the id order and
//! [`Tensor::backward`] replays nodes from the highest id down.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

mod conv;
mod gemm;
pub mod gradcheck;
mod loss;
mod ops;
mod pool;

pub use conv::{conv2d, conv2d_transposed, ConvSpec};
pub use gradcheck::finite_difference_check;
pub use loss::{cross_entropy_per_sample, softmax_cross_entropy};
pub use ops::{add, concat_channels, relu, scale, sum, weighted_sum};
pub use pool::maxpool2d;

/// (batch, channels, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Local gradient rule of one recorded operation.
pub(crate) trait GradFn {
    /// Gradients for each input, in input order. `None` for inputs that do
    /// not need one.
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Recorded {
    inputs: Vec<Tensor>,
    grad_fn: Box<dyn GradFn>,
}

struct Node {
    id: u64,
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    is_leaf: bool,
    grad: RefCell<Option<Vec<f64>>>,
    // `None` on a non-leaf once backward has consumed it.
    recorded: RefCell<Option<Recorded>>,
}

/// Dense rank-4 array of `f64`, cheap to clone (reference counted).
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn make(shape: Shape, data: Vec<f64>, requires_grad: bool, recorded: Option<Recorded>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        let is_leaf = recorded.is_none();
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                is_leaf,
                grad: RefCell::new(None),
                recorded: RefCell::new(recorded),
            }),
        }
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor::make(shape, data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn parameter(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::make(t.shape(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor::make(shape, vec![0.0; shape.numel()], false, None)
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor::make(shape, vec![value; shape.numel()], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::make(Shape::scalar(), vec![value], false, None)
    }

    /// Same values, detached from any graph, with gradient tracking set as given.
    pub fn detached(&self, requires_grad: bool) -> Self {
        Tensor::make(self.shape(), self.to_vec(), requires_grad, None)
    }

    /// Result of an operation. Records `grad_fn` only if some input tracks gradients.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<f64>,
        inputs: &[&Tensor],
        grad_fn: impl GradFn + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let recorded = requires_grad.then(|| Recorded {
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            grad_fn: Box::new(grad_fn),
        });
        if requires_grad {
            Tensor::make(shape, data, true, recorded)
        } else {
            Tensor::make(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> Shape {
        self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.is_leaf
    }

    /// Creation order; inputs of an operation always have smaller ids.
    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.node.data[self.node.shape.index(n, c, y, x)]
    }

    pub fn item(&self) -> Result<f64> {
        match self.node.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape("item", format!("expected one element, shape is {}", self.shape()))),
        }
    }

    /// Gradient accumulated by backward (leaves only).
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.node.grad.borrow_mut().take();
    }

    /// Channel slice `[start, start + len)` as a new, non-tracking tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if start + len > s.c {
            return Err(Error::shape(
                "channels",
                format!("slice {start}..{} out of {} channels", start + len, s.c),
            ));
        }
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let base = s.index(n, start, 0, 0);
            out.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), out)
    }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls on distinct graphs; calling backward twice through the same
    /// recorded nodes is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Backward(format!(
                "root must be a scalar, got shape {}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Backward("root does not depend on any tensor requiring grad".into()));
        }

        // Collect the reachable graph. Consumption is checked up front so a
        // failed call leaves the graph untouched.
        let mut nodes: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        let mut seen = HashSet::new();
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if !t.is_leaf() {
                let rec = t.node.recorded.borrow();
                match rec.as_ref() {
                    Some(r) => stack.extend(r.inputs.iter().filter(|i| i.requires_grad()).cloned()),
                    None => {
                        return Err(Error::Backward(
                            "graph already consumed by an earlier backward call".into(),
                        ))
                    }
                }
            }
            nodes.insert(t.id(), t);
        }

        let mut pending: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        pending.insert(self.id(), vec![1.0]);
        for (id, t) in nodes.iter().rev() {
            let Some(g) = pending.remove(id) else { continue };
            if t.is_leaf() {
                let mut slot = t.node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
                continue;
            }
            let rec = t.node.recorded.borrow_mut().take().expect("checked above");
            let grads = rec.grad_fn.backward(&rec.inputs, &g);
            for (input, grad) in rec.inputs.iter().zip(grads) {
                let (true, Some(grad)) = (input.requires_grad(), grad) else { continue };
                debug_assert_eq!(grad.len(), input.numel());
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(input.id(), grad);
                    }
                }
            }
        }
        Ok(())
    }
}
