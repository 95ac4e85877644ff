//! Dense numeric kernel: tensors, small MLPs with hand-written backward
//! passes, stable softmax, SGD with momentum and a finite-difference
//! gradient checker. Everything above this module is built from these
//! primitives.

mod gradcheck;
mod mlp;
mod ops;
mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{mlp_forward, Activation, FinalActivation, Mlp, MlpSpec, MlpTrace};
pub use ops::{
    log_sum_exp, sigmoid, softmax, softmax_slice, softmax_vjp, softplus, softplus_inverse,
};
pub use optim::{sgd_step, OptimizerState};
pub use scalar::Scalar;
pub use tensor::Tensor;
