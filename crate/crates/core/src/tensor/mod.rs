//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! Every op allocates a fresh output node. When any input requires a
//! gradient, the node keeps handles to its inputs and a [`GradFn`] that maps
//! the output gradient back onto them. [`Tensor::backward`] walks the graph
//! in reverse topological order and accumulates into the `grad` buffer of
//! every leaf that requires one. Intermediate nodes never retain gradients.
//!
//! Tensors are reference counted and therefore not `Send`; a graph lives on
//! the thread that built it. Parameter values are shared across threads as
//! plain buffers (see [`crate::params::ParamSet`]).

mod elementwise;
mod linalg;
mod reduce;
mod shape;

pub use shape::broadcast_leading;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Backward rule of one recorded op.
///
/// Returns one entry per input, `None` where the input needs no gradient.
pub(crate) trait GradFn {
    fn backward(&self, grad_out: &[f64], inputs: &[Tensor], output: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    inputs: Vec<Tensor>,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// Handle to an immutable array node in the autograd graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Constant tensor. Fails when the data length disagrees with the shape
    /// or any extent is zero.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Leaf that accumulates a gradient during [`Tensor::backward`].
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::leaf(t.data().to_vec(), shape.to_vec(), true))
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![value], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![0.0; numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            data,
            shape,
            requires_grad,
            grad: RefCell::new(None),
            inputs: Vec::new(),
            grad_fn: None,
        }))
    }

    /// Build an op output. The graph edge is only recorded when some input
    /// requires a gradient.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        inputs: &[&Tensor],
        grad_fn: impl GradFn + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        if !requires_grad {
            return Self::leaf(data, shape, false);
        }
        Tensor(Rc::new(Node {
            data,
            shape,
            requires_grad: true,
            grad: RefCell::new(None),
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            grad_fn: Some(Box::new(grad_fn)),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    fn id(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode pass from a scalar loss. Gradients accumulate into
    /// leaves across repeated calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(f) => {
                    let input_grads = f.backward(&grad, &node.0.inputs, &node.0.data);
                    debug_assert_eq!(input_grads.len(), node.0.inputs.len());
                    for (input, g) in node.0.inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(input.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes that require a gradient, inputs before consumers.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        // (node, inputs expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if visited.insert(node.id(), ()).is_some() {
                continue;
            }
            stack.push((node.clone(), true));
            for input in &node.0.inputs {
                if input.requires_grad() && !visited.contains_key(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }
}

pub(crate) fn check_axis(axis: usize, shape: &[usize]) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// Split a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}
