//! The recognition bridge: a waveform encoder, an adapter into the LM
//! embedding space and a decoder-only LM conditioned on the adapter output as
//! a soft prefix. Also fine-tuning schemes, parameter accounting, the
//! checkpoint file format and a cached incremental scorer for decoding.

mod bridge;
pub mod checkpoint;
mod count;
mod infer;
mod scheme;
mod vocab;

pub use bridge::{cross_entropy, trainable_parameters, AsrOutput, BridgeModel, Encoder, DecoderLm};
pub use checkpoint::CheckpointError;
pub use count::{count_params, published_components, reported_total_millions, ParamCounts};
pub use infer::{BridgeScorer, InferenceLm, LmState, Recognizer};
pub use scheme::{FinetuneMode, FinetuneScheme};
pub use vocab::{TokenId, Vocab};

use serde::{Deserialize, Serialize};

use crate::layers::{AdapterConfig, AdapterKind, AttnRole, BlockSpec, Conv1dSpec, LayerError, LoraSpec};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unsupported fine-tuning scheme: {0}")]
    UnsupportedScheme(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("waveform has {len} samples but at least {min} are needed")]
    WaveformTooShort { len: usize, min: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Decode(#[from] crate::decode::DecodeError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One strided convolution of the waveform front-end, followed by GeLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// The last stage's channel count must equal `d_enc`.
    pub front_end: Vec<ConvStage>,
    pub d_enc: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

impl EncoderConfig {
    pub fn conv_specs(&self) -> Vec<Conv1dSpec> {
        let mut c_in = 1;
        self.front_end
            .iter()
            .map(|s| {
                let spec = Conv1dSpec::new(c_in, s.channels, s.kernel, s.stride);
                c_in = s.channels;
                spec
            })
            .collect()
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            d: self.d_enc,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.front_end.iter().map(|s| s.stride).product()
    }

    /// Frame count after the front-end, or `None` if the input is too short.
    pub fn output_len(&self, samples: usize) -> Option<usize> {
        self.conv_specs()
            .iter()
            .try_fold(samples, |len, spec| spec.output_len(len))
    }

    pub fn param_count(&self) -> u64 {
        let convs: u64 = self.conv_specs().iter().map(|s| s.param_count()).sum();
        convs + self.layers as u64 * self.block_spec().param_count() + 2 * self.d_enc as u64
    }

    pub fn lora_param_count(&self, lora: &LoraSpec) -> u64 {
        self.layers as u64 * self.block_spec().lora_param_count(lora)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_llm: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

impl LmConfig {
    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            d: self.d_llm,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
        }
    }

    /// Embedding table (tied with the output head), blocks and final norm.
    pub fn param_count(&self, vocab_size: usize) -> u64 {
        (vocab_size * self.d_llm) as u64
            + self.layers as u64 * self.block_spec().param_count()
            + 2 * self.d_llm as u64
    }

    pub fn lora_param_count(&self, lora: &LoraSpec) -> u64 {
        self.layers as u64 * self.block_spec().lora_param_count(lora)
    }
}

/// Full description of a bridge. The adapter kind comes from the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub encoder: EncoderConfig,
    pub lm: LmConfig,
    pub subsample: usize,
    pub adapter_layers: usize,
    pub adapter_ffn_multiplier: f64,
    pub adapter_heads: usize,
    pub adapter_positional: bool,
    pub vocab: Vocab,
    pub encoder_lora: LoraSpec,
    pub lm_lora: LoraSpec,
}

impl BridgeConfig {
    /// Default toy dimensions: trains in minutes on one CPU core.
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig {
                front_end: vec![
                    ConvStage {
                        channels: 32,
                        kernel: 4,
                        stride: 4,
                    },
                    ConvStage {
                        channels: 64,
                        kernel: 2,
                        stride: 2,
                    },
                ],
                d_enc: 64,
                layers: 2,
                heads: 4,
                ffn_hidden: 256,
            },
            lm: LmConfig {
                d_llm: 128,
                layers: 4,
                heads: 4,
                ffn_hidden: 512,
            },
            subsample: 4,
            adapter_layers: 2,
            adapter_ffn_multiplier: 2.5,
            adapter_heads: 4,
            adapter_positional: false,
            vocab: Vocab::new(32),
            encoder_lora: LoraSpec::new(8, 16.0, &[AttnRole::Query, AttnRole::Value]),
            lm_lora: LoraSpec::new(16, 16.0, &[AttnRole::Query, AttnRole::Key, AttnRole::Value]),
        }
    }

    /// A smaller variant of [`toy`](Self::toy) used for repeated experiment runs;
    /// the vocabulary matches the default synthetic corpus.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig {
                front_end: vec![
                    ConvStage {
                        channels: 16,
                        kernel: 4,
                        stride: 4,
                    },
                    ConvStage {
                        channels: 32,
                        kernel: 2,
                        stride: 2,
                    },
                ],
                d_enc: 32,
                layers: 1,
                heads: 2,
                ffn_hidden: 64,
            },
            lm: LmConfig {
                d_llm: 64,
                layers: 2,
                heads: 4,
                ffn_hidden: 128,
            },
            subsample: 4,
            adapter_layers: 1,
            adapter_ffn_multiplier: 2.5,
            adapter_heads: 4,
            adapter_positional: false,
            vocab: Vocab::new(8),
            encoder_lora: LoraSpec::new(8, 16.0, &[AttnRole::Query, AttnRole::Value]),
            lm_lora: LoraSpec::new(16, 16.0, &[AttnRole::Query, AttnRole::Key, AttnRole::Value]),
        }
    }

    /// Dimensions of the full-size system (a large self-supervised speech
    /// encoder and a 7B LM). Used for parameter accounting only.
    pub fn paper_scale() -> Self {
        let mut front_end = vec![ConvStage {
            channels: 512,
            kernel: 10,
            stride: 5,
        }];
        front_end.extend((0..4).map(|_| ConvStage {
            channels: 512,
            kernel: 3,
            stride: 2,
        }));
        front_end.push(ConvStage {
            channels: 512,
            kernel: 2,
            stride: 2,
        });
        front_end.push(ConvStage {
            channels: 1024,
            kernel: 2,
            stride: 2,
        });
        Self {
            encoder: EncoderConfig {
                front_end,
                d_enc: 1024,
                layers: 24,
                heads: 16,
                ffn_hidden: 4096,
            },
            lm: LmConfig {
                d_llm: 4096,
                layers: 32,
                heads: 32,
                ffn_hidden: 11008,
            },
            subsample: 8,
            adapter_layers: 2,
            adapter_ffn_multiplier: 2.5,
            adapter_heads: 32,
            adapter_positional: false,
            vocab: Vocab::new(31998),
            encoder_lora: LoraSpec::new(8, 16.0, &[AttnRole::Query, AttnRole::Value]),
            lm_lora: LoraSpec::new(16, 16.0, &[AttnRole::Query, AttnRole::Key, AttnRole::Value]),
        }
    }

    pub fn adapter_config(&self, kind: AdapterKind) -> AdapterConfig {
        AdapterConfig {
            kind,
            d_enc: self.encoder.d_enc,
            d_llm: self.lm.d_llm,
            subsample: self.subsample,
            transformer_layers: self.adapter_layers,
            ffn_multiplier: self.adapter_ffn_multiplier,
            heads: self.adapter_heads,
            positional: self.adapter_positional,
        }
    }

    /// Smallest waveform (in samples) that survives every strided stage.
    pub fn min_samples(&self) -> usize {
        let mut len = self.subsample.max(1);
        for s in self.encoder.front_end.iter().rev() {
            len = (len - 1) * s.stride + s.kernel;
        }
        len
    }

    /// Adapter frames produced from `samples` waveform samples.
    pub fn prefix_len(&self, samples: usize) -> Option<usize> {
        let t_enc = self.encoder.output_len(samples)?;
        self.adapter_config(AdapterKind::Conv1dMLP).output_len(t_enc)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        match self.encoder.front_end.last() {
            None => return err("the encoder needs at least one front-end stage".into()),
            Some(s) if s.channels != self.encoder.d_enc => {
                return err(format!(
                    "last front-end stage has {} channels but d_enc is {}",
                    s.channels, self.encoder.d_enc
                ))
            }
            _ => {}
        }
        for s in &self.encoder.front_end {
            if s.kernel == 0 || s.stride == 0 || s.channels == 0 {
                return err(format!("invalid front-end stage {s:?}"));
            }
        }
        if self.vocab.content == 0 {
            return err("the vocabulary needs at least one content token".into());
        }
        for (name, d, h) in [
            ("encoder", self.encoder.d_enc, self.encoder.heads),
            ("lm", self.lm.d_llm, self.lm.heads),
        ] {
            if d == 0 || h == 0 || d % h != 0 {
                return err(format!("{name} width {d} is not divisible into {h} heads"));
            }
        }
        self.encoder_lora.validate(self.encoder.d_enc, self.encoder.d_enc)?;
        self.lm_lora.validate(self.lm.d_llm, self.lm.d_llm)?;
        self.adapter_config(AdapterKind::Conv1dMLP).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
