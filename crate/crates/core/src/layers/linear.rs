use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{LayerError, ParamBuilder, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn new(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            bias: true,
        }
    }

    pub fn param_count(&self) -> u64 {
        (self.d_in * self.d_out + if self.bias { self.d_out } else { 0 }) as u64
    }
}

/// Projection matrix of a self-attention block that LoRA may wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnRole {
    Query,
    Key,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub r: usize,
    pub alpha: f64,
    pub targets: BTreeSet<AttnRole>,
}

impl LoraSpec {
    pub fn new(r: usize, alpha: f64, targets: &[AttnRole]) -> Self {
        Self {
            r,
            alpha,
            targets: targets.iter().copied().collect(),
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }

    /// Trainable elements of one `(A, B)` pair on a `d_out × d_in` matrix.
    pub fn pair_params(&self, d_in: usize, d_out: usize) -> u64 {
        (self.r * (d_in + d_out)) as u64
    }

    pub fn validate(&self, d_in: usize, d_out: usize) -> Result<()> {
        if self.r == 0 {
            return Err(LayerError::Config("LoRA rank must be at least 1".into()));
        }
        if self.r > d_in.min(d_out) {
            return Err(LayerError::Config(format!(
                "LoRA rank {} exceeds min(d_in={d_in}, d_out={d_out})",
                self.r
            )));
        }
        Ok(())
    }
}

/// Low-rank factor pair: `A: [r × d_in]`, `B: [d_out × r]`.
#[derive(Debug, Clone)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub r: usize,
    pub alpha: f64,
}

impl Lora {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }
}

/// `y = x·Wᵀ + b`, optionally plus `(alpha/r)·(x·Aᵀ)·Bᵀ`. Rows of `x` are samples.
#[derive(Debug, Clone)]
pub struct Linear {
    pub spec: LinearSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub lora: Option<Lora>,
}

impl Linear {
    pub fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, spec: LinearSpec) -> Self {
        let bound = 1.0 / (spec.d_in as f64).sqrt();
        let weight = pb.uniform("weight", &[spec.d_out, spec.d_in], bound);
        let bias = spec.bias.then(|| pb.zeros("bias", &[spec.d_out]));
        Self {
            spec,
            weight,
            bias,
            lora: None,
        }
    }

    /// Attaches a LoRA pair; `A` gets a uniform init, `B` starts at zero so the
    /// wrapped layer initially computes exactly the base projection.
    pub fn attach_lora<T: Scalar>(
        &mut self,
        pb: &mut ParamBuilder<'_, T>,
        lora: &LoraSpec,
    ) -> Result<()> {
        lora.validate(self.spec.d_in, self.spec.d_out)?;
        let mut pb = pb.with_trainable(true);
        let bound = 1.0 / (self.spec.d_in as f64).sqrt();
        let a = pb.uniform("lora_a", &[lora.r, self.spec.d_in], bound);
        let b = pb.zeros("lora_b", &[self.spec.d_out, lora.r]);
        self.lora = Some(Lora {
            a,
            b,
            r: lora.r,
            alpha: lora.alpha,
        });
        Ok(())
    }

    pub fn base_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn lora_ids(&self) -> Vec<ParamId> {
        self.lora.iter().flat_map(|l| [l.a, l.b]).collect()
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        let mut y = x.matmul_t(g.param(store, self.weight))?;
        if let Some(lora) = &self.lora {
            let low = x.matmul_t(g.param(store, lora.a))?;
            let delta = low.matmul_t(g.param(store, lora.b))?.scale(lora.scaling());
            y = y.add(delta)?;
        }
        if let Some(b) = self.bias {
            y = y.add_row(g.param(store, b))?;
        }
        Ok(y)
    }

    /// Effective weight with any LoRA update folded in.
    pub fn merged_weight<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Tensor<T>> {
        let w = store.value(self.weight);
        match &self.lora {
            None => Ok(w.clone()),
            Some(l) => lora_merge(w, store.value(l.a), store.value(l.b), l.alpha),
        }
    }
}

fn check_lora_shapes<T: Scalar>(w: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<usize> {
    let (d_out, d_in) = w.dims2("lora")?;
    let (r, a_in) = a.dims2("lora")?;
    let (b_out, r2) = b.dims2("lora")?;
    if a_in != d_in || b_out != d_out || r != r2 {
        return Err(LayerError::Config(format!(
            "LoRA shapes W{:?} A{:?} B{:?} are inconsistent",
            w.shape(),
            a.shape(),
            b.shape()
        )));
    }
    if r == 0 || r > d_in.min(d_out) {
        return Err(LayerError::Config(format!(
            "LoRA rank {r} exceeds min(d_in={d_in}, d_out={d_out})"
        )));
    }
    Ok(r)
}

/// `y = x·Wᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ` for row-stacked inputs `x: [n × d_in]`
/// (the column-vector form `W·x + (alpha/r)·B·A·x` applied per row).
pub fn lora_forward<T: Scalar>(
    w: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    alpha: f64,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let r = check_lora_shapes(w, a, b)?;
    let base = tensor::matmul_t(x, w)?;
    let low = tensor::matmul_t(x, a)?;
    let delta = tensor::matmul_t(&low, b)?.scale(T::lit(alpha / r as f64));
    Ok(base.add(&delta)?)
}

/// `W' = W + (alpha/r)·B·A`.
pub fn lora_merge<T: Scalar>(
    w: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    alpha: f64,
) -> Result<Tensor<T>> {
    let r = check_lora_shapes(w, a, b)?;
    let delta = tensor::matmul(b, a)?.scale(T::lit(alpha / r as f64));
    Ok(w.add(&delta)?)
}
