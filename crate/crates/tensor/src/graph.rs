//! Reverse-mode tape.
//!
//! A [`Graph`] records every op as a node holding its output value. Nodes
//! are appended in evaluation order, so walking them backwards visits each
//! node after all of its consumers. One graph belongs to one thread; build a
//! fresh graph per forward pass.

use crate::error::{Result, TensorError};
use crate::ops::{conv, elementwise, linalg, norm, reduce, shape};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Binary {
        kind: elementwise::BinaryKind,
        lhs: Var,
        rhs: Var,
    },
    Unary {
        kind: elementwise::UnaryKind<T>,
        x: Var,
    },
    SumAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    MatMul {
        lhs: Var,
        rhs: Var,
        trans_lhs: bool,
        trans_rhs: bool,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Pointwise1d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    },
    Depthwise1d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: norm::BatchNormCache<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: norm::LayerNormCache<T>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    UpsampleTime {
        x: Var,
        factor: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`; `None` when `var` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by conv, linear and matmul ops so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, macs: usize) {
        self.macs += macs as u64;
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Trainable leaf; receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Appends an op node; rejects non-finite outputs.
    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(TensorError::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(out.shape().to_vec()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (var, contribution) in self.backward_node(id, &g) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            // Interior gradients are not retained.
        }
        for g in grads.iter().flatten() {
            if !g.all_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary { kind, lhs, rhs } => {
                elementwise::binary_backward(*kind, val(*lhs), val(*rhs), &node.value, g)
                    .into_iter()
                    .zip([*lhs, *rhs])
                    .filter_map(|(t, v)| t.map(|t| (v, t)))
                    .collect()
            }
            Op::Unary { kind, x } => {
                vec![(*x, elementwise::unary_backward(kind, val(*x), &node.value, g))]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(val(*x).shape().to_vec(), g.item()))],
            Op::SumAxis { x, axis } => vec![(*x, reduce::sum_axis_backward(val(*x).shape(), *axis, g))],
            Op::Softmax { x, axis } => vec![(*x, reduce::softmax_backward(&node.value, *axis, g))],
            Op::LogSoftmax { x, axis } => {
                vec![(*x, reduce::log_softmax_backward(&node.value, *axis, g))]
            }
            Op::MatMul {
                lhs,
                rhs,
                trans_lhs,
                trans_rhs,
            } => {
                let (ga, gb) = linalg::matmul_backward(
                    val(*lhs),
                    val(*rhs),
                    *trans_lhs,
                    *trans_rhs,
                    g,
                    wants(*lhs),
                    wants(*rhs),
                );
                collect_grads([(*lhs, ga), (*rhs, gb)])
            }
            Op::Linear { x, weight, bias } => {
                let (gx, gw, gb) = linalg::linear_backward(val(*x), val(*weight), g, wants(*x));
                let mut out = collect_grads([(*x, gx), (*weight, Some(gw))]);
                if let Some(b) = bias {
                    out.push((*b, gb));
                }
                out
            }
            Op::Pointwise1d { x, weight, bias } => {
                let (gx, gw, gb) =
                    linalg::pointwise1d_backward(val(*x), val(*weight), g, wants(*x));
                let mut out = collect_grads([(*x, gx), (*weight, Some(gw))]);
                if let Some(b) = bias {
                    out.push((*b, gb));
                }
                out
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
            } => {
                let (gx, gw, gb) =
                    conv::conv2d_backward(val(*x), val(*weight), *stride, g, wants(*x));
                let mut out = collect_grads([(*x, gx), (*weight, Some(gw))]);
                if let Some(b) = bias {
                    out.push((*b, gb));
                }
                out
            }
            Op::Depthwise1d { x, weight, bias } => {
                let (gx, gw, gb) = conv::depthwise1d_backward(val(*x), val(*weight), g);
                let mut out = vec![(*x, gx), (*weight, gw)];
                if let Some(b) = bias {
                    out.push((*b, gb));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (gx, gg, gb) = norm::batch_norm_backward(val(*x).shape(), val(*gamma), cache, g);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (gx, gg, gb) = norm::layer_norm_backward(val(*gamma), cache, g);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Reshape(x) => vec![(
                *x,
                Tensor::from_parts(val(*x).shape().to_vec(), g.data().to_vec()),
            )],
            Op::Permute { x, axes } => vec![(*x, shape::permute_backward(axes, g))],
            Op::Narrow { x, axis, start } => {
                vec![(*x, shape::narrow_backward(val(*x).shape(), *axis, *start, g))]
            }
            Op::Concat { xs, axis } => {
                let shapes: Vec<&[usize]> = xs.iter().map(|v| val(*v).shape()).collect();
                xs.iter()
                    .copied()
                    .zip(shape::concat_backward(&shapes, *axis, g))
                    .collect()
            }
            Op::UpsampleTime { x, factor } => {
                vec![(*x, shape::upsample_time_backward(*factor, g))]
            }
        }
    }
}

fn collect_grads<T, const N: usize>(items: [(Var, Option<Tensor<T>>); N]) -> Vec<(Var, Tensor<T>)> {
    items
        .into_iter()
        .filter_map(|(v, t)| t.map(|t| (v, t)))
        .collect()
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
        Op::Unary { x, .. }
        | Op::SumAll(x)
        | Op::SumAxis { x, .. }
        | Op::Softmax { x, .. }
        | Op::LogSoftmax { x, .. }
        | Op::Reshape(x)
        | Op::Permute { x, .. }
        | Op::Narrow { x, .. }
        | Op::UpsampleTime { x, .. } => vec![*x],
        Op::MatMul { lhs, rhs, .. } => vec![*lhs, *rhs],
        Op::Linear { x, weight, bias }
        | Op::Pointwise1d { x, weight, bias }
        | Op::Conv2d { x, weight, bias, .. }
        | Op::Depthwise1d { x, weight, bias } => {
            let mut v = vec![*x, *weight];
            v.extend(bias.iter().copied());
            v
        }
        Op::BatchNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta, .. } => {
            vec![*x, *gamma, *beta]
        }
        Op::Concat { xs, .. } => xs.clone(),
    }
}
