//! Bridge between a speech encoder and a decoder-only language model for
//! recognition: adapters, LoRA fine-tuning schemes, a cross-attention matching
//! loss, constrained beam search, and insertion-error reduction in training.
//!
//! Numerics are generic over [`Scalar`] (`f32` for training, `f64` for gradient
//! checks); the aliases below fix the precision for common use.

pub mod data;
pub mod decode;
pub mod layers;
pub mod matchloss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use params::{Param, ParamId, ParamStore};
pub use scalar::{Precision, Scalar};
pub use tensor::{Gradients, Graph, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
