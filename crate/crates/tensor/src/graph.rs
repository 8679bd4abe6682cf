//! Define-by-run tape. Every op appends a node holding its output value and
//! enough bookkeeping to push gradients back to its inputs.

use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::params::Params;
use crate::tensor::Tensor;
use std::collections::{BTreeMap, HashMap};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    SwapAxes(Var, usize, usize),
    Reshape(Var),
    Softmax(Var),
    Gelu(Var),
    Mish(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    GroupNorm { x: Var, gain: Var, bias: Var, groups: usize, mean: Vec<T>, rstd: Vec<T> },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Film { x: Var, scale: Var, shift: Var },
    Concat { xs: Vec<Var>, dim: usize },
    Slice { x: Var, dim: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    MeanDim { x: Var, dim: usize },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::SwapAxes(..) => "swap_axes",
            Op::Reshape(..) => "reshape",
            Op::Softmax(..) => "softmax",
            Op::Gelu(..) => "gelu",
            Op::Mish(..) => "mish",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GroupNorm { .. } => "group_norm",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv_transpose1d",
            Op::Film { .. } => "film",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Embedding { .. } => "embedding",
            Op::MeanDim { .. } => "mean_dim",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

pub struct Graph<T: Elem> {
    pub(crate) nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    grad_enabled: bool,
    check_finite: bool,
}

impl<T: Elem> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Graph<T> {
    /// A graph that records ops for `backward`.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            grad_enabled: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// A graph that only evaluates; nothing requires a gradient.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf input that receives a gradient (when the graph records).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a named parameter. Repeated lookups of one name share a node.
    pub fn param(&mut self, params: &Params<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.input(params.get(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite(op.name()));
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = self.nodes.get(loss.0).ok_or(TensorError::DetachedLoss)?;
        if node.value.numel() != 1 {
            return Err(TensorError::NotScalar(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));
        let mut leaves = HashMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(i, g);
                continue;
            }
            for (v, contribution) in crate::ops::backward(self, i, &g)? {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let mut params = BTreeMap::new();
        for (name, v) in &self.params {
            let g = leaves
                .get(&v.0)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            params.insert(name.clone(), g);
        }
        Ok(Gradients { leaves, params })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Elem> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradients for every parameter the forward pass touched.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}
