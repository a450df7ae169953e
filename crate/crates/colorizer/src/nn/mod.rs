//! Minimal tensor and layer kernels with hand-written forward and backward
//! passes, losses, optimizers, and a finite-difference gradient checker.
//!
//! Everything here is sequential and bitwise deterministic: each output
//! element is accumulated in a fixed order.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, conv_out_dim, Conv2dSpec};
pub use gradcheck::{check_all_kernels, GradCheckReport};
pub use layers::{
    batchnorm_backward, batchnorm_forward, relu_backward, relu_forward, tanh_backward,
    tanh_forward, upsample_backward, upsample_forward, BatchNormCache, BnMode, UpsampleMode,
};
pub use loss::{euclidean_loss, softmax_cross_entropy};
pub use optim::{optimizer_step, OptimConfig, OptimKind, OptimState};
pub use tensor::Tensor;
