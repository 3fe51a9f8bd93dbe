//! Reverse-mode differentiable tensor core.
//!
//! Tensors are dense row-major matrices. Sequence batches of shape
//! `[B × n × d]` are stored flattened as `[(B·n) × d]` with row `b·n + t`
//! holding position `t` of sequence `b`.
//!
//! A [`Graph`] records one forward pass. Persistent weights live in a
//! [`ParamStore`] and are copied into the graph as leaves with
//! [`Graph::param`]; [`Graph::backward`] followed by
//! [`Graph::accumulate_param_grads`] hands the gradients back to the store,
//! where [`Adam`] consumes them.

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
pub mod suite;
mod graph;
mod kernels;
mod ops;
mod param;
mod real;
mod tensor;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{read_params, write_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::DiffError;
pub use graph::{Graph, Var};
pub use ops::causal_conv1d;
pub use ops::{gumbel_softmax_sample, gumbel_softmax_with_noise};
pub use ops::AttentionShape;
pub use param::{Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, DiffError>;
