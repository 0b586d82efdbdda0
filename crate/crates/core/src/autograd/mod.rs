//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order, which is also a valid topological order. [`Tape::backward`] walks
//! the record in reverse and accumulates vector-Jacobian products; values
//! consumed by several ops receive the sum of all path gradients.

mod check;
mod ops;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{BinaryFn, Element, FilterMode, Padding, ReduceKind, Stride, Tensor, UnaryFn};

pub use check::{finite_diff_check, gradient_check, relative_error, GradCheck};
use ops::{OpKind, Saved};

struct Node<T> {
    kind: OpKind<T>,
    inputs: Vec<usize>,
    value: Rc<Tensor<T>>,
    saved: Saved<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A handle to one recorded value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Per-channel statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_raw(&self, kind: OpKind<T>, inputs: Vec<usize>, value: Tensor<T>, saved: Saved<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            kind,
            inputs,
            value: Rc::new(value),
            saved,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(OpKind::Leaf, Vec::new(), value, Saved::Nothing, true)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(OpKind::Constant, Vec::new(), value, Saved::Nothing, false)
    }

    fn record(&self, kind: OpKind<T>, inputs: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        if inputs.iter().any(|v| !std::ptr::eq(v.tape, self)) {
            return Err(Error::ForeignVariable);
        }
        let (values, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<Rc<Tensor<T>>> =
                inputs.iter().map(|v| Rc::clone(&nodes[v.id].value)).collect();
            let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (values, rg)
        };
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let (value, saved) = ops::eval(&kind, &refs)?;
        Ok(self.push_raw(
            kind,
            inputs.iter().map(|v| v.id).collect(),
            value,
            saved,
            requires_grad,
        ))
    }

    /// Reverse sweep from a single-element root. Gradients are returned for
    /// every leaf that influences the root.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::ForeignVariable);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(Tensor::ones(root_value.shape().to_vec())?);
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if matches!(node.kind, OpKind::Leaf | OpKind::Constant) {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let input_grads = ops::backward(&node.kind, &inputs, &node.value, &node.saved, &grad)?;
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign_same(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        // Keep only leaf gradients.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].kind, OpKind::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Re-evaluates every recorded op from the stored leaf and constant
    /// values, returning the recomputed node values in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let value = match node.kind {
                OpKind::Leaf | OpKind::Constant => node.value.as_ref().clone(),
                _ => {
                    let refs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
                    ops::eval(&node.kind, &refs)?.0
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Checks the structural invariant: every input precedes its consumer.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .all(|(id, n)| n.inputs.iter().all(|&i| i < id))
    }

    /// Number of recorded ops consuming `var`.
    pub fn consumers(&self, var: Var<'_, T>) -> usize {
        self.nodes
            .borrow()
            .iter()
            .map(|n| n.inputs.iter().filter(|&&i| i == var.id).count())
            .sum()
    }

    /// Recorded values of every node, in tape order.
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.nodes.borrow().iter().map(|n| n.value.as_ref().clone()).collect()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to `var`; `None` when `var` is not a
    /// leaf or does not influence the root.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::wrt`] but substitutes zeros for leaves that did not
    /// influence the root.
    pub fn wrt_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.wrt(var).cloned().unwrap_or_else(|| {
            Tensor::zeros(var.shape()).expect("recorded shapes are valid")
        })
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, f: UnaryFn<T>) -> Self {
        self.tape
            .record(OpKind::Unary(f), &[self])
            .expect("unary ops cannot fail")
    }

    fn binary(self, other: Self, f: BinaryFn) -> Result<Self> {
        self.tape.record(OpKind::Binary(f), &[self, other])
    }

    pub fn sigmoid(self) -> Self {
        self.unary(UnaryFn::Sigmoid)
    }

    pub fn relu(self) -> Self {
        self.unary(UnaryFn::Relu)
    }

    pub fn log_clamped(self) -> Self {
        self.unary(UnaryFn::LogClamped)
    }

    pub fn neg(self) -> Self {
        self.unary(UnaryFn::Negate)
    }

    pub fn scale(self, factor: T) -> Self {
        self.unary(UnaryFn::Scale(factor))
    }

    /// Broadcasting addition.
    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, BinaryFn::Add)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, BinaryFn::Sub)
    }

    /// Broadcasting multiplication.
    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, BinaryFn::Mul)
    }

    pub fn div(self, other: Self) -> Result<Self> {
        self.binary(other, BinaryFn::Div)
    }

    pub fn reduce(self, axes: &[usize], kind: ReduceKind) -> Result<Self> {
        self.tape.record(
            OpKind::Reduce {
                axes: axes.to_vec(),
                kind,
            },
            &[self],
        )
    }

    pub fn sum(self, axes: &[usize]) -> Result<Self> {
        self.reduce(axes, ReduceKind::Sum)
    }

    pub fn mean(self, axes: &[usize]) -> Result<Self> {
        self.reduce(axes, ReduceKind::Mean)
    }

    /// Max over `axes`; the gradient routes to the first maximal element.
    pub fn max(self, axes: &[usize]) -> Result<Self> {
        self.reduce(axes, ReduceKind::Max)
    }

    /// Sum of every element as a `[1]` tensor.
    pub fn sum_all(self) -> Result<Self> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes)?.reshape(&[1])
    }

    pub fn softmax(self, axes: &[usize]) -> Result<Self> {
        self.tape.record(
            OpKind::Softmax {
                axes: axes.to_vec(),
            },
            &[self],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.tape.record(
            OpKind::Reshape {
                shape: shape.to_vec(),
            },
            &[self],
        )
    }

    pub fn conv2d(
        self,
        kernel: Self,
        bias: Option<Self>,
        padding: Padding,
        stride: Stride,
    ) -> Result<Self> {
        let kind = OpKind::Conv2d { padding, stride };
        match bias {
            Some(b) => self.tape.record(kind, &[self, kernel, b]),
            None => self.tape.record(kind, &[self, kernel]),
        }
    }

    pub fn linear(self, weight: Self, bias: Option<Self>) -> Result<Self> {
        match bias {
            Some(b) => self.tape.record(OpKind::Linear, &[self, weight, b]),
            None => self.tape.record(OpKind::Linear, &[self, weight]),
        }
    }

    pub fn gaussian_filter(self, k: usize, sigma: f64, mode: FilterMode) -> Result<Self> {
        self.tape.record(OpKind::Gaussian { k, sigma, mode }, &[self])
    }

    /// Per-slice `(x − min)/(max − min)`, optionally remapped to `[−1, 1]`.
    /// Differentiated through the selected extreme elements.
    pub fn minmax_normalize(self, axes: &[usize], symmetric: bool) -> Result<Self> {
        self.tape.record(
            OpKind::MinMax {
                axes: axes.to_vec(),
                symmetric,
            },
            &[self],
        )
    }

    /// Training-mode batch normalization over every axis except 1.
    pub fn batch_norm(self, gamma: Self, beta: Self, eps: f64) -> Result<(Self, BatchStats<T>)> {
        let out = self.tape.record(OpKind::BatchNorm { eps }, &[self, gamma, beta])?;
        let nodes = self.tape.nodes.borrow();
        let Saved::BatchNorm { mean, var, .. } = &nodes[out.id].saved else {
            unreachable!("batch norm always saves statistics");
        };
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        Ok((out, stats))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self> {
        self.tape.record(
            OpKind::CrossEntropy {
                labels: labels.to_vec(),
            },
            &[self],
        )
    }

    pub fn concat(parts: &[Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        first.tape.record(OpKind::Concat { axis }, parts)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.tape.record(OpKind::Narrow { axis, start, len }, &[self])
    }
}
