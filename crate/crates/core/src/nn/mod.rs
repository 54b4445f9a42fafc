//! Minimal dense neural-network engine: parameters, a differentiable forward
//! trace, and an adaptive-moment optimizer. All arithmetic is `f64`.

pub mod gradcheck;
mod layers;
mod optim;
mod param;
mod tape;

pub use layers::{
    apply_activation, dense_forward, dropout, dropout_mask, softmax_in_place, softplus, Activation,
    DropoutMode,
};
pub use optim::{AdamConfig, OptimizerState};
pub use param::{ParamId, ParamStore, ParamTensor};
pub use tape::{ForwardTrace, NodeId};
