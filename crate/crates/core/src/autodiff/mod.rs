//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends one node to a [`Tape`]. Nodes only refer to
//! earlier nodes, so the tape is always in topological order and a single
//! reverse sweep visits each node once.

pub mod gradcheck;
pub mod ops;

use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub use ops::batchnorm::{BatchNormState, Mode};
pub use ops::conv::Conv2dSpec;
pub use ops::gru::GruDirection;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse rule of a recorded operation.
pub trait Backward<T: Real> {
    fn inputs(&self) -> Vec<Var>;

    /// Accumulate input gradients given the gradient of this node's output.
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>);
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Read access to node values during the reverse sweep.
pub struct BackwardCtx<'a, T: Real> {
    nodes: &'a [Node<T>],
    output: Var,
}

impl<T: Real> BackwardCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.nodes[self.output.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Gradient accumulators for the nodes below the one being differentiated.
pub struct GradSink<'a, T: Real> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Real> GradSink<'_, T> {
    /// Mutable gradient buffer of `v`, or `None` when `v` needs no gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }

    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        if let Some(slot) = self.slot(v) {
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a computed node; the backward rule is only built when some
    /// input carries a gradient.
    pub fn push<B, F>(&mut self, value: Tensor<T>, inputs: &[Var], make_op: F) -> Var
    where
        B: Backward<T> + 'static,
        F: FnOnce() -> B,
    {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward<T>>> =
            if requires_grad { Some(Box::new(make_op())) } else { None };
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.nodes[output.0].value.numel() != 1 {
            return shape_err(
                "backward",
                format!("output must be scalar, has shape {:?}", self.shape(output)),
            );
        }
        self.backward_with(output, vec![T::one()])
    }

    /// Reverse sweep seeded with an explicit output gradient. Only leaf
    /// gradients survive the sweep.
    pub fn backward_with(&self, output: Var, seed: Vec<T>) -> Result<Gradients<T>> {
        if seed.len() != self.nodes[output.0].value.numel() {
            return shape_err("backward", "seed length differs from output size");
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(op) = self.nodes[idx].op.as_ref() else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let (below, _) = grads.split_at_mut(idx);
            let ctx = BackwardCtx { nodes: &self.nodes, output: Var(idx) };
            let mut sink = GradSink { grads: below, nodes: &self.nodes };
            op.backward(&ctx, &g, &mut sink);
        }
        Ok(Gradients { grads })
    }
}
