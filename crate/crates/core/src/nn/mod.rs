//! Self-contained differentiable kernel: dense tensors, layers with analytic
//! gradients, Sinkhorn normalization, assignment, loss, and optimizer.

mod adam;
pub mod gradcheck;
mod hungarian;
mod loss;
mod model;
pub mod ops;
mod sinkhorn;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig};
pub use hungarian::{assignment_cost, hungarian};
pub use loss::perm_xent_loss;
pub use model::{Grads, HyperParams, Model, ParamId, Parameter, MAGIC, VERSION};
pub use ops::Adjacency;
pub use sinkhorn::{sinkhorn, sinkhorn_log, sinkhorn_log_backward, SinkhornCache, SlackSinkhorn};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("model file: {0}")]
    Format(String),
}
