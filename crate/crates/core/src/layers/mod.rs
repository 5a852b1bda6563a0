//! Neural building blocks: linear layers with optional LoRA, strided and
//! depthwise-separable 1D convolutions, pre-norm transformer blocks and the
//! three adapter variants that map encoder frames into the LM embedding space.

mod adapter;
mod conv;
mod linear;
mod transformer;

pub use adapter::{Adapter, AdapterConfig, AdapterKind};
pub use conv::{Conv1d, Conv1dSpec, DwsConv1d};
pub use linear::{lora_forward, lora_merge, AttnRole, Linear, LinearSpec, Lora, LoraSpec};
pub use transformer::{
    sinusoid_positions, AttentionMask, BlockSpec, LayerNorm, SelfAttention, TransformerBlock, LN_EPS,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, LayerError>;

/// Registers freshly initialised parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    trainable: bool,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            trainable: true,
        }
    }

    /// Child builder whose names get `name.` prepended.
    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
            trainable: self.trainable,
        }
    }

    /// Child builder with a different trainable flag for everything it registers.
    pub fn with_trainable(&mut self, trainable: bool) -> ParamBuilder<'_, T> {
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix: self.prefix.clone(),
            trainable,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, value, self.trainable)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.random_range(-bound..=bound)))
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches buffer");
        self.add(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                T::lit(z * std)
            })
            .collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape matches buffer");
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, T::one()))
    }
}

#[cfg(test)]
mod tests;
