use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Layout, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum UnaryKind {
    AddScalar,
    MulScalar(f64),
    Pow(f64),
    Silu,
    Log10,
    Clamp(f64, f64),
}

pub(crate) enum Op<R> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        la: Layout,
        lb: Layout,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        attrs: super::conv::ConvAttrs,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        attrs: super::conv::ConvAttrs,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    Dropout {
        a: Var,
        mask: Vec<R>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Sum {
        a: Var,
    },
    SumAxis {
        a: Var,
        axis: usize,
    },
    RelShift {
        a: Var,
    },
    OverlapAdd {
        a: Var,
        hop: usize,
    },
}

impl<R> Op<R> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Unary { kind, .. } => match kind {
                UnaryKind::AddScalar => "add_scalar",
                UnaryKind::MulScalar(_) => "mul_scalar",
                UnaryKind::Pow(_) => "pow",
                UnaryKind::Silu => "silu",
                UnaryKind::Log10 => "log10",
                UnaryKind::Clamp(..) => "clamp",
            },
            Op::Matmul { .. } => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv_transpose1d",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GroupNorm { .. } => "group_norm",
            Op::Dropout { .. } => "dropout",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::Sum { .. } => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::RelShift { .. } => "rel_shift",
            Op::OverlapAdd { .. } => "overlap_add",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::Matmul { a, b } => vec![*a, *b],
            Op::Unary { a, .. }
            | Op::Softmax { a }
            | Op::Dropout { a, .. }
            | Op::Narrow { a, .. }
            | Op::Permute { a, .. }
            | Op::Reshape { a }
            | Op::Sum { a }
            | Op::SumAxis { a, .. }
            | Op::RelShift { a }
            | Op::OverlapAdd { a, .. } => vec![*a],
            Op::Conv1d { x, w, bias, .. } | Op::ConvTranspose1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } | Op::GroupNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<R> {
    pub(crate) value: Tensor<R>,
    pub(crate) grad: Option<Vec<R>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<R>,
}

/// A reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the tape is always a valid
/// topological order and backward walks it once in reverse.
pub struct Graph<R: Real> {
    pub(crate) nodes: Vec<Node<R>>,
    pub(crate) train: bool,
    pub(crate) checked: bool,
    pub(crate) rng: ChaCha8Rng,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            checked: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Enable dropout, drawing masks from a stream seeded with `seed`.
    pub fn train_mode(mut self, seed: u64) -> Self {
        self.train = true;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    /// Fail any op whose output is not finite.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<R>, op: Op<R>) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, zeros if it never received one.
    pub fn grad(&self, v: Var) -> Tensor<R> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Populate leaf gradients of the scalar `loss`.
    ///
    /// Gradients add onto whatever the leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, gi) in self.backward_op(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if self.checked && gi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {}",
                        self.nodes[i].op.name()
                    )));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, i: usize, g: &[R]) -> Result<Vec<(Var, Vec<R>)>> {
        let node = &self.nodes[i];
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Binary {
                kind, a, b, la, lb, ..
            } => super::elementwise::binary_backward(self, *kind, *a, *b, la, lb, g),
            Op::Unary { kind, a } => {
                vec![(*a, super::elementwise::unary_backward(self, *kind, *a, g))]
            }
            Op::Matmul { a, b } => super::linalg::matmul_backward(self, *a, *b, g),
            Op::Conv1d { x, w, bias, attrs } => {
                super::conv::conv1d_backward(self, *x, *w, *bias, attrs, g)
            }
            Op::ConvTranspose1d { x, w, bias, attrs } => {
                super::conv::conv_transpose1d_backward(self, *x, *w, *bias, attrs, g)
            }
            Op::Softmax { a } => vec![(*a, super::norm::softmax_backward(&node.value, g))],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => super::norm::layer_norm_backward(self, *x, *gamma, *beta, xhat, rstd, g),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            } => super::norm::group_norm_backward(self, *x, *gamma, *beta, *groups, xhat, rstd, g),
            Op::Dropout { a, mask } => {
                vec![(*a, g.iter().zip(mask).map(|(&g, &m)| g * m).collect())]
            }
            Op::Concat { inputs, axis } => super::shape::concat_backward(self, inputs, *axis, i, g),
            Op::Narrow { a, axis, start } => {
                vec![(*a, super::shape::narrow_backward(self, *a, *axis, *start, i, g))]
            }
            Op::Permute { a, perm } => {
                vec![(*a, super::shape::permute_backward(self, *a, perm, g))]
            }
            Op::Reshape { a } => vec![(*a, g.to_vec())],
            Op::Sum { a } => vec![(*a, vec![g[0]; self.value(*a).numel()])],
            Op::SumAxis { a, axis } => {
                vec![(*a, super::shape::sum_axis_backward(self, *a, *axis, g))]
            }
            Op::RelShift { a } => vec![(*a, super::shape::rel_shift_backward(self, *a, g))],
            Op::OverlapAdd { a, hop } => {
                vec![(*a, super::shape::overlap_add_backward(self, *a, *hop, g))]
            }
        })
    }
}
