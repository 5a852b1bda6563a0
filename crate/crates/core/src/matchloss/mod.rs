//! Matching loss between target-token embeddings and the adapter output:
//! parameter-free dot-product cross attention from the embeddings onto the
//! adapter frames, then a weighted MSE plus cosine distance.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{TensorError, Var};

/// Below this norm a row pair contributes zero cosine distance.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchLossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cross attention needs non-empty queries and keys (got {queries} and {keys} rows)")]
    Degenerate { queries: usize, keys: usize },
    #[error("invalid matching-loss weights: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MatchLossError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchLossConfig {
    /// MSE weight.
    pub a: f64,
    /// Cosine-distance weight.
    pub b: f64,
    /// Let gradients reach the embedding table through `E`.
    pub embed_grad: bool,
}

impl Default for MatchLossConfig {
    fn default() -> Self {
        Self {
            a: 0.01,
            b: 0.04,
            embed_grad: true,
        }
    }
}

impl MatchLossConfig {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let cfg = Self {
            a,
            b,
            embed_grad: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(MatchLossError::Config(format!(
                "a = {}, b = {}; both must be finite and non-negative",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// `H = softmax(E·X1ᵀ / √d_llm) · X1`.
pub fn cross_attention<'g, T: Scalar>(e: Var<'g, T>, x1: Var<'g, T>, d_llm: usize) -> Result<Var<'g, T>> {
    let (queries, keys) = (e.value().rows(), x1.value().rows());
    if queries == 0 || keys == 0 {
        return Err(MatchLossError::Degenerate { queries, keys });
    }
    let scores = e.matmul_t(x1)?.scale(1.0 / (d_llm as f64).sqrt());
    Ok(scores.softmax_rows()?.matmul(x1)?)
}

/// `a·mean((E−H)²) + b·mean_t(1 − cos(E_t, H_t))`.
pub fn matching_loss<'g, T: Scalar>(e: Var<'g, T>, h: Var<'g, T>, cfg: &MatchLossConfig) -> Result<Var<'g, T>> {
    cfg.validate()?;
    let diff = e.sub(h)?;
    let mse = diff.mul(diff)?.mean();
    let cos = e.cosine_distance_rows(h, COSINE_EPS)?;
    Ok(mse.scale(cfg.a).add(cos.scale(cfg.b))?)
}

/// `ce + lm`; the weights `a`, `b` already live inside `lm`.
pub fn combined_loss<'g, T: Scalar>(ce: Var<'g, T>, lm: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(ce.add(lm)?)
}
