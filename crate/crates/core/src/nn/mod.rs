//! Dense-tensor neural-network engine: layers with explicit backward passes,
//! losses, Glorot initialization and Adam.

mod adam;
pub mod gradcheck;
mod init;
mod layer;
mod loss;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use init::{glorot_limit, glorot_uniform, glorot_uniform_with};
pub use layer::{
    BatchNorm, Cache, Conv1d, Dense, ForwardCtx, Layer, LayerKind, Mode, Padding, BN_EPSILON, BN_MOMENTUM,
    PRELU_INIT,
};
pub use loss::{loss, LossKind, DISTRIBUTION_TOL};
pub use tensor::Tensor;
