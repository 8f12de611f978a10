//! Connectome-structured control policies: connectome ingestion and null
//! models, a sparse message-passing policy with its own reverse-mode engine,
//! imitation and PPO training, toy locomotion environments, and the
//! representation-analysis pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod connectome;
pub mod env;
pub mod error;
pub mod nullmodels;
pub mod numeric;
pub mod persistence;
pub mod policy;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = numeric::Tensor2<f32>;
pub type Tensor64 = numeric::Tensor2<f64>;
pub type Operator32 = connectome::SignedOperator<f32>;
pub type Operator64 = connectome::SignedOperator<f64>;
