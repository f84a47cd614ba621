//! Tensors, reverse-mode autodiff, log-domain primitives, Adam and the
//! tensor archive format.

pub mod adam;
pub mod archive;
pub mod gradcheck;
pub mod kernels;
pub mod logspace;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, OptimizerState, StepStats};
pub use gradcheck::grad_check;
pub use logspace::{log_sigmoid_pair, log_softmax, logaddexp};
pub use params::{GradMap, ParamId, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
