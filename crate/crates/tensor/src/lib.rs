//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! Enough machinery for convolutional GANs and actor-critic networks on CPU:
//! NCHW convolutions and transposed convolutions, batchnorm, dropout, the
//! usual activations, a handful of reductions for writing losses, and the
//! Adam / RMSProp optimizers.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod optim;
pub mod params;
mod scalar;
mod tensor;

pub use conv::ConvGeom;
pub use error::{Result, TensorError};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use scalar::Real;
pub use tensor::Tensor;
