use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    sinusoid_positions, BlockSpec, Conv1d, Conv1dSpec, DwsConv1d, LayerError, Linear, LinearSpec,
    ParamBuilder, Result, TransformerBlock,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Graph, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdapterKind {
    Conv1dMLP,
    DwsMLP,
    Conv1dTransformer,
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterKind::Conv1dMLP => "Conv1dMLP",
            AdapterKind::DwsMLP => "DwsMLP",
            AdapterKind::Conv1dTransformer => "Conv1dTransformer",
        })
    }
}

impl FromStr for AdapterKind {
    type Err = LayerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv1dmlp" => Ok(AdapterKind::Conv1dMLP),
            "dwsmlp" => Ok(AdapterKind::DwsMLP),
            "conv1dtransformer" => Ok(AdapterKind::Conv1dTransformer),
            _ => Err(LayerError::Config(format!("unknown adapter kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub d_enc: usize,
    pub d_llm: usize,
    /// Temporal subsampling factor; the convolution uses kernel = stride = subsample.
    pub subsample: usize,
    /// Conv1dTransformer only.
    pub transformer_layers: usize,
    /// Conv1dTransformer only: FFN width as a multiple of `d_llm`.
    pub ffn_multiplier: f64,
    pub heads: usize,
    /// Add sinusoidal positions before the transformer layers (Conv1dTransformer only).
    pub positional: bool,
}

impl AdapterConfig {
    pub fn new(kind: AdapterKind, d_enc: usize, d_llm: usize, subsample: usize) -> Self {
        Self {
            kind,
            d_enc,
            d_llm,
            subsample,
            transformer_layers: 2,
            ffn_multiplier: 2.5,
            heads: 4,
            positional: false,
        }
    }

    pub fn conv_spec(&self) -> Conv1dSpec {
        Conv1dSpec::new(self.d_enc, self.d_llm, self.subsample, self.subsample)
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            d: self.d_llm,
            heads: self.heads,
            ffn_hidden: (self.ffn_multiplier * self.d_llm as f64).round() as usize,
        }
    }

    pub fn output_len(&self, t_enc: usize) -> Option<usize> {
        self.conv_spec().output_len(t_enc)
    }

    pub fn param_count(&self) -> u64 {
        let proj = LinearSpec::new(self.d_llm, self.d_llm).param_count();
        match self.kind {
            AdapterKind::Conv1dMLP => self.conv_spec().param_count() + proj,
            AdapterKind::DwsMLP => self.conv_spec().dws_param_count() + proj,
            AdapterKind::Conv1dTransformer => {
                self.conv_spec().param_count()
                    + proj
                    + self.transformer_layers as u64 * self.block_spec().param_count()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsample == 0 {
            return Err(LayerError::Config("subsample must be at least 1".into()));
        }
        if self.kind == AdapterKind::Conv1dTransformer && self.ffn_multiplier <= 0.0 {
            return Err(LayerError::Config("ffn multiplier must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Subsampler {
    Conv(Conv1d),
    Dws(DwsConv1d),
}

/// Maps encoder frames `[T_enc × d_enc]` to LM-space frames `[T_a × d_llm]`.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub cfg: AdapterConfig,
    sub: Subsampler,
    proj: Linear,
    blocks: Vec<TransformerBlock>,
}

impl Adapter {
    pub fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: AdapterConfig) -> Result<Self> {
        cfg.validate()?;
        let sub = match cfg.kind {
            AdapterKind::DwsMLP => Subsampler::Dws(DwsConv1d::build(&mut pb.sub("conv"), cfg.conv_spec())?),
            _ => Subsampler::Conv(Conv1d::build(&mut pb.sub("conv"), cfg.conv_spec())?),
        };
        let proj = Linear::build(&mut pb.sub("proj"), LinearSpec::new(cfg.d_llm, cfg.d_llm));
        let blocks = if cfg.kind == AdapterKind::Conv1dTransformer {
            (0..cfg.transformer_layers)
                .map(|i| TransformerBlock::build(&mut pb.sub(&format!("layers.{i}")), cfg.block_spec(), None))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            sub,
            proj,
            blocks,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = match &self.sub {
            Subsampler::Conv(c) => c.ids(),
            Subsampler::Dws(d) => d.ids(),
        };
        ids.extend(self.proj.base_ids());
        for b in &self.blocks {
            ids.extend(b.base_ids());
        }
        ids
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        enc_out: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        let (t_enc, d) = enc_out.value().dims2("adapter")?;
        if d != self.cfg.d_enc {
            return Err(TensorError::DimMismatch {
                op: "adapter",
                lhs: vec![t_enc, d],
                rhs: vec![self.cfg.d_enc],
            });
        }
        let sub = match &self.sub {
            Subsampler::Conv(c) => c.forward(g, store, enc_out)?,
            Subsampler::Dws(c) => c.forward(g, store, enc_out)?,
        };
        let mut x = self.proj.forward(g, store, sub.gelu())?;
        if !self.blocks.is_empty() {
            if self.cfg.positional {
                let len = x.value().rows();
                x = x.add(g.input(sinusoid_positions(len, self.cfg.d_llm, 0)))?;
            }
            for b in &self.blocks {
                x = b.forward(g, store, x, None)?;
            }
        }
        Ok(x)
    }
}
