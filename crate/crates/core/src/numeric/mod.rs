//! Dense matrices, the sparse propagation kernel, trainable parameter storage
//! and the taped reverse-mode engine.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, BlockReport, GradCheckConfig, GradCheckReport};
pub use params::{Gradients, Linear, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, spmm, Activation, SurrogateBatch, SurrogateStats, Tape, Var};
pub use tensor::Tensor2;

#[allow(unused_imports)]
pub(crate) use params::uniform;
