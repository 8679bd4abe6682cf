//! Dense `f32`/`f64` tensors with a define-by-run autodiff tape, the layers
//! the dynamics meta-models are built from, Adam with cosine annealing, and
//! a named-tensor checkpoint container.

pub mod checkpoint;
mod elem;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
pub mod optim;
mod params;
mod tensor;

pub use elem::Elem;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use ops::{broadcast_shape, NORM_EPS};
pub use params::{Init, ParamSpec, Params, Registry};
pub use tensor::{numel, Tensor};
