use super::{LayerError, Linear, LinearSpec, LoraSpec, AttnRole, ParamBuilder, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Graph, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, d: usize) -> Self {
        Self {
            gamma: pb.ones("gamma", &[d]),
            beta: pb.zeros("beta", &[d]),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        x.layer_norm(g.param(store, self.gamma), g.param(store, self.beta), LN_EPS)
    }

    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> tensor::Result<Tensor<T>> {
        tensor::layer_norm_rows(
            x,
            store.value(self.gamma).data(),
            store.value(self.beta).data(),
            T::lit(LN_EPS),
        )
    }
}

/// Which positions a query row may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMask {
    /// Every row sees every column.
    Full,
    /// Row `i` sees columns `j ≤ i`.
    Causal,
    /// The first `prefix` positions are visible to everyone; after that, causal.
    Prefix(usize),
}

impl AttentionMask {
    pub fn allows(self, i: usize, j: usize) -> bool {
        match self {
            AttentionMask::Full => true,
            AttentionMask::Causal => j <= i,
            AttentionMask::Prefix(p) => j < p || j <= i,
        }
    }

    /// Additive `[n × n]` mask: zero where allowed, `-inf` elsewhere.
    pub fn additive<T: Scalar>(self, n: usize) -> Option<Tensor<T>> {
        if self == AttentionMask::Full {
            return None;
        }
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if !self.allows(i, j) {
                    t.data_mut()[i * n + j] = T::neg_infinity();
                }
            }
        }
        Some(t)
    }
}

/// Fixed sinusoidal position table `[len × d]` starting at position `offset`.
pub fn sinusoid_positions<T: Scalar>(len: usize, d: usize, offset: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[len, d]);
    for p in 0..len {
        let pos = (p + offset) as f64;
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let v = if i % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            };
            t.data_mut()[p * d + i] = T::lit(v);
        }
    }
    t
}

/// Multi-head scaled dot-product self-attention with q/k/v/o projections.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub d: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl SelfAttention {
    pub fn build<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        d: usize,
        heads: usize,
        lora: Option<&LoraSpec>,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(LayerError::Config(format!(
                "model dim {d} is not divisible into {heads} heads"
            )));
        }
        let spec = LinearSpec::new(d, d);
        let mut q = Linear::build(&mut pb.sub("q"), spec);
        let mut k = Linear::build(&mut pb.sub("k"), spec);
        let mut v = Linear::build(&mut pb.sub("v"), spec);
        let o = Linear::build(&mut pb.sub("o"), spec);
        if let Some(l) = lora {
            for (role, lin, name) in [
                (AttnRole::Query, &mut q, "q"),
                (AttnRole::Key, &mut k, "k"),
                (AttnRole::Value, &mut v, "v"),
            ] {
                if l.targets.contains(&role) {
                    lin.attach_lora(&mut pb.sub(name), l)?;
                }
            }
        }
        Ok(Self { d, heads, q, k, v, o })
    }

    pub fn projections(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mask: Option<Var<'g, T>>,
    ) -> tensor::Result<Var<'g, T>> {
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (q.slice_cols(lo, hi)?, k.slice_cols(lo, hi)?, v.slice_cols(lo, hi)?)
            };
            let mut scores = qh.matmul_t(kh)?.scale(scale);
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            outs.push(scores.softmax_rows()?.matmul(vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.o.forward(g, store, merged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub d: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

impl BlockSpec {
    /// Base (non-LoRA) parameters: two layer norms, four attention
    /// projections and the two FFN projections, all with biases.
    pub fn param_count(&self) -> u64 {
        let d = self.d as u64;
        let h = self.ffn_hidden as u64;
        2 * 2 * d + 4 * (d * d + d) + (d * h + h) + (h * d + d)
    }

    pub fn lora_param_count(&self, lora: &LoraSpec) -> u64 {
        lora.targets.len() as u64 * lora.pair_params(self.d, self.d)
    }
}

/// Pre-norm block: `x + Attn(LN(x))`, then `x + FFN(LN(x))` with a GeLU FFN.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub spec: BlockSpec,
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn build<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        spec: BlockSpec,
        lora: Option<&LoraSpec>,
    ) -> Result<Self> {
        let ln1 = LayerNorm::build(&mut pb.sub("ln1"), spec.d);
        let attn = SelfAttention::build(&mut pb.sub("attn"), spec.d, spec.heads, lora)?;
        let ln2 = LayerNorm::build(&mut pb.sub("ln2"), spec.d);
        let ff1 = Linear::build(&mut pb.sub("ff1"), LinearSpec::new(spec.d, spec.ffn_hidden));
        let ff2 = Linear::build(&mut pb.sub("ff2"), LinearSpec::new(spec.ffn_hidden, spec.d));
        Ok(Self {
            spec,
            ln1,
            attn,
            ln2,
            ff1,
            ff2,
        })
    }

    pub fn base_ids(&self) -> Vec<ParamId> {
        let mut ids = self.ln1.ids();
        for p in self.attn.projections() {
            ids.extend(p.base_ids());
        }
        ids.extend(self.ln2.ids());
        ids.extend(self.ff1.base_ids());
        ids.extend(self.ff2.base_ids());
        ids
    }

    pub fn lora_ids(&self) -> Vec<ParamId> {
        self.attn
            .projections()
            .iter()
            .flat_map(|p| p.lora_ids())
            .collect()
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        mask: Option<Var<'g, T>>,
    ) -> tensor::Result<Var<'g, T>> {
        let h = self.ln1.forward(g, store, x)?;
        let x = x.add(self.attn.forward(g, store, h, mask)?)?;
        let h = self.ln2.forward(g, store, x)?;
        let f = self.ff2.forward(g, store, self.ff1.forward(g, store, h)?.gelu())?;
        x.add(f)
    }
}
