mod conv;
mod elementwise;
mod linalg;
mod norm;
mod shape;

pub use elementwise::broadcast_shape;
pub use norm::NORM_EPS;

use crate::elem::Elem;
use crate::error::Result;
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Gradient contributions of node `idx` to its inputs.
pub(crate) fn backward<T: Elem>(g: &Graph<T>, idx: usize, out_grad: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    let node = &g.nodes[idx];
    let op = &node.op;
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Scale(..)
        | Op::AddScalar(..)
        | Op::Gelu(..)
        | Op::Mish(..)
        | Op::Sum(..)
        | Op::Mean(..) => elementwise::backward(g, op, out_grad),
        Op::MatMul(..) | Op::SwapAxes(..) | Op::Reshape(..) => linalg::backward(g, op, out_grad),
        Op::Softmax(..) | Op::LayerNorm { .. } | Op::GroupNorm { .. } => {
            norm::backward(g, op, out_grad, &node.value)
        }
        Op::Conv1d { .. } | Op::ConvTranspose1d { .. } => conv::backward(g, op, out_grad),
        Op::Film { .. } | Op::Concat { .. } | Op::Slice { .. } | Op::Embedding { .. } | Op::MeanDim { .. } => {
            shape::backward(g, op, out_grad)
        }
    })
}
