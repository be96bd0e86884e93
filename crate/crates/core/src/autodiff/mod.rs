//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is rebuilt on every forward pass. Each recorded node holds its
//! value; [`Tape::backward`] walks the nodes once in reverse order and returns
//! gradients for the leaves that asked for them.

mod check;
mod ops;

use std::borrow::Cow;

pub use check::{check_node_vjps, grad_check, GradCheckConfig, GradCheckReport, NodeCheck, ProbeResult};
#[doc(hidden)]
pub use ops::inject_adjoint_fault;
pub use ops::Activation;
pub(crate) use ops::relative_errors;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transforms::BasisKind;
use ops::Op;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<'a> {
    op: Op,
    inputs: Vec<Var>,
    value: Cow<'a, Tensor>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericFault {
                context: format!("leaf {}", self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push_leaf(Cow::Owned(value), requires_grad)
    }

    /// Owned leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// Borrowed leaf that receives a gradient, without copying its data.
    pub fn param(&mut self, value: &'a Tensor) -> Result<Var> {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn record(&mut self, op: Op, inputs: Vec<Var>) -> Result<Var> {
        let refs: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let value = op.eval(&refs)?;
        let index = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NumericFault {
                context: format!("{} (node {index})", op.name()),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value: Cow::Owned(value),
            requires_grad,
        });
        Ok(Var(index))
    }

    /// `x . weight + bias` at every grid point; `x` is `[..., C_in]`.
    pub fn pointwise_affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.record(Op::Affine, vec![x, weight, bias])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.record(Op::Activation(kind), vec![x])
    }

    /// Forward transform of `[batch, grid..., C]` along the grid axes.
    pub fn forward_transform(&mut self, x: Var, bases: &[BasisKind]) -> Result<Var> {
        self.record(
            Op::ForwardTransform {
                bases: bases.to_vec(),
            },
            vec![x],
        )
    }

    /// Inverse transform of `[batch, modes..., C]` onto grids of extents `n_out`.
    pub fn inverse_transform(&mut self, x: Var, bases: &[BasisKind], n_out: &[usize]) -> Result<Var> {
        if bases.len() != n_out.len() {
            return Err(Error::shape("one output extent per basis is required"));
        }
        self.record(
            Op::InverseTransform {
                bases: bases.to_vec(),
                n_out: n_out.to_vec(),
            },
            vec![x],
        )
    }

    /// Keeps the first `keep[i]` modes along grid axis `i + 1`.
    pub fn truncate(&mut self, x: Var, keep: &[usize]) -> Result<Var> {
        self.record(Op::Truncate { keep: keep.to_vec() }, vec![x])
    }

    /// Banded mode-coupling channel mix; see the crate docs for weight layout.
    pub fn banded_spectral_multiply(&mut self, c: Var, weights: Var, bands: &[usize]) -> Result<Var> {
        self.record(
            Op::Banded {
                bands: bands.to_vec(),
            },
            vec![c, weights],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, vec![a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(factor), vec![x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum, vec![x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumSquares, vec![x])
    }

    /// Mean over the leading axis of `||pred_i - ref_i|| / ||ref_i||`.
    pub fn relative_l2_loss(&mut self, pred: Var, reference: &Tensor) -> Result<Var> {
        self.record(
            Op::RelativeL2 {
                target: reference.clone(),
            },
            vec![pred],
        )
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidUse(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for index in (0..=loss.0).rev() {
            let node = &self.nodes[index];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| self.value(*v)).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = node.op.vjp(&inputs, &node.value, &grad, &needs)?;
            for (var, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !g.is_finite() {
                    return Err(Error::NumericFault {
                        context: format!("backward through {} (node {index})", node.op.name()),
                    });
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn node_parts(&self, index: usize) -> (&Op, &[Var]) {
        let node = &self.nodes[index];
        (&node.op, &node.inputs)
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf that requires one; `None` otherwise.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests;
