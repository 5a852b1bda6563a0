use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BridgeConfig, EncoderConfig, FinetuneMode, FinetuneScheme, LmConfig, ModelError, Result, TokenId};
use crate::layers::{
    sinusoid_positions, Adapter, AttentionMask, AttnRole, Conv1d, LayerNorm, Linear, LoraSpec, ParamBuilder,
    TransformerBlock,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

// Independent RNG streams so that, for a fixed seed, the base encoder and LM
// weights do not depend on the adapter kind or on which LoRA pairs exist.
const STREAM_ENCODER: u64 = 1;
const STREAM_ADAPTER: u64 = 2;
const STREAM_LM: u64 = 3;
const STREAM_LORA: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn attach_lora<T: Scalar>(
    pb: &mut ParamBuilder<'_, T>,
    blocks: &mut [TransformerBlock],
    spec: &LoraSpec,
) -> Result<()> {
    for (i, block) in blocks.iter_mut().enumerate() {
        let mut layer = pb.sub(&format!("layers.{i}.attn"));
        let roles: [(AttnRole, &mut Linear, &str); 3] = [
            (AttnRole::Query, &mut block.attn.q, "q"),
            (AttnRole::Key, &mut block.attn.k, "k"),
            (AttnRole::Value, &mut block.attn.v, "v"),
        ];
        for (role, lin, name) in roles {
            if spec.targets.contains(&role) {
                lin.attach_lora(&mut layer.sub(name), spec)?;
            }
        }
    }
    Ok(())
}

/// Strided convolutions over the raw waveform, then a transformer stack.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub convs: Vec<Conv1d>,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub d: usize,
}

impl Encoder {
    fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &EncoderConfig) -> Result<Self> {
        let convs = cfg
            .conv_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Conv1d::build(&mut pb.sub(&format!("conv.{i}")), spec))
            .collect::<std::result::Result<_, _>>()?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::build(&mut pb.sub(&format!("layers.{i}")), cfg.block_spec(), None))
            .collect::<std::result::Result<_, _>>()?;
        let ln_f = LayerNorm::build(&mut pb.sub("ln_f"), cfg.d_enc);
        Ok(Self {
            convs,
            blocks,
            ln_f,
            d: cfg.d_enc,
        })
    }

    pub fn base_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.convs.iter().flat_map(|c| c.ids()).collect();
        ids.extend(self.blocks.iter().flat_map(|b| b.base_ids()));
        ids.extend(self.ln_f.ids());
        ids
    }

    pub fn lora_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.lora_ids()).collect()
    }

    /// `[N × 1]` waveform to `[T_enc × d_enc]` frames.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        wave: Var<'g, T>,
    ) -> crate::tensor::Result<Var<'g, T>> {
        let mut x = wave;
        for conv in &self.convs {
            x = conv.forward(g, store, x)?.gelu();
        }
        let len = x.value().rows();
        x = x.add(g.input(sinusoid_positions(len, self.d, 0)))?;
        for b in &self.blocks {
            x = b.forward(g, store, x, None)?;
        }
        self.ln_f.forward(g, store, x)
    }
}

/// Decoder-only LM whose embedding table doubles as the output head.
#[derive(Debug, Clone)]
pub struct DecoderLm {
    pub embed: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub d: usize,
    pub vocab_size: usize,
}

impl DecoderLm {
    fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &LmConfig, vocab_size: usize) -> Result<Self> {
        let embed = pb.normal("embed", &[vocab_size, cfg.d_llm], 1.0);
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::build(&mut pb.sub(&format!("layers.{i}")), cfg.block_spec(), None))
            .collect::<std::result::Result<_, _>>()?;
        let ln_f = LayerNorm::build(&mut pb.sub("ln_f"), cfg.d_llm);
        Ok(Self {
            embed,
            blocks,
            ln_f,
            d: cfg.d_llm,
            vocab_size,
        })
    }

    pub fn base_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        ids.extend(self.blocks.iter().flat_map(|b| b.base_ids()));
        ids.extend(self.ln_f.ids());
        ids
    }

    pub fn lora_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.lora_ids()).collect()
    }

    /// Logits for every text position of `prefix ++ tokens`. `tokens` must
    /// already start with BOS; row `i` predicts the token after `tokens[i]`.
    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        prefix: Var<'g, T>,
        tokens: &[TokenId],
    ) -> crate::tensor::Result<Var<'g, T>> {
        let table = g.param(store, self.embed);
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let emb = g.gather_rows(table, &ids)?;
        let t_a = prefix.value().rows();
        let total = t_a + ids.len();
        let mut x = g
            .concat_rows(&[prefix, emb])?
            .add(g.input(sinusoid_positions(total, self.d, 0)))?;
        let mask = AttentionMask::Prefix(t_a).additive(total).map(|m| g.input(m));
        for b in &self.blocks {
            x = b.forward(g, store, x, mask)?;
        }
        let h = self.ln_f.forward(g, store, x.slice_rows(t_a, total)?)?;
        Ok(h.matmul_t(table)?.scale(1.0 / (self.d as f64).sqrt()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AsrOutput<'g, T: Scalar> {
    /// `[(|Y|+1) × |V|]`, predicting `Y ++ [EOS]`.
    pub logits: Var<'g, T>,
    /// Adapter output `[T_a × d_llm]`.
    pub x1: Var<'g, T>,
}

#[derive(Debug, Clone)]
pub struct BridgeModel<T: Scalar> {
    pub config: BridgeConfig,
    pub scheme: FinetuneScheme,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub adapter: Adapter,
    pub lm: DecoderLm,
}

impl<T: Scalar> BridgeModel<T> {
    /// Deterministic in `seed`. LoRA pairs are added per scheme; trainable
    /// flags follow the scheme (the adapter always trains).
    pub fn build(config: &BridgeConfig, scheme: FinetuneScheme, seed: u64) -> Result<Self> {
        scheme.validate()?;
        config.validate()?;
        let mut store = ParamStore::new();

        let mut rng = stream(seed, STREAM_ENCODER);
        let mut encoder = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            let mut pb = pb.with_trainable(scheme.encoder == FinetuneMode::Full);
            Encoder::build(&mut pb.sub("encoder"), &config.encoder)?
        };
        let mut rng = stream(seed, STREAM_ADAPTER);
        let adapter = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            Adapter::build(&mut pb.sub("adapter"), config.adapter_config(scheme.adapter))?
        };
        let mut rng = stream(seed, STREAM_LM);
        let mut lm = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            let mut pb = pb.with_trainable(false);
            DecoderLm::build(&mut pb.sub("lm"), &config.lm, config.vocab.size())?
        };

        let mut rng = stream(seed, STREAM_LORA);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        if scheme.encoder == FinetuneMode::LoRa {
            attach_lora(&mut pb.sub("encoder"), &mut encoder.blocks, &config.encoder_lora)?;
        }
        if scheme.llm == FinetuneMode::LoRa {
            attach_lora(&mut pb.sub("lm"), &mut lm.blocks, &config.lm_lora)?;
        }

        Ok(Self {
            config: config.clone(),
            scheme,
            store,
            encoder,
            adapter,
            lm,
        })
    }

    /// The table used both for LM input embedding and for target embeddings.
    pub fn embedding_table(&self) -> ParamId {
        self.lm.embed
    }

    pub fn eos(&self) -> TokenId {
        self.config.vocab.eos()
    }

    fn waveform_var<'g>(&self, g: &'g Graph<T>, waveform: &[T]) -> Result<Var<'g, T>> {
        let min = self.config.min_samples();
        if waveform.len() < min {
            return Err(ModelError::WaveformTooShort {
                len: waveform.len(),
                min,
            });
        }
        Ok(g.input(Tensor::new(vec![waveform.len(), 1], waveform.to_vec())?))
    }

    /// `X1 = Adapt(Enc(X))`, shape `[T_a × d_llm]`.
    pub fn encode<'g>(&self, g: &'g Graph<T>, waveform: &[T]) -> Result<Var<'g, T>> {
        let wave = self.waveform_var(g, waveform)?;
        let enc = self.encoder.forward(g, &self.store, wave)?;
        Ok(self.adapter.forward(g, &self.store, enc)?)
    }

    fn check_targets(&self, targets: &[TokenId]) -> Result<()> {
        match targets.iter().find(|&&t| !self.config.vocab.is_content(t)) {
            Some(&t) => Err(ModelError::UnknownToken(self.config.vocab.word(t))),
            None => Ok(()),
        }
    }

    /// Teacher-forced pass over `[X1] ++ [BOS] ++ Y`.
    pub fn forward_asr<'g>(
        &self,
        g: &'g Graph<T>,
        waveform: &[T],
        targets: &[TokenId],
    ) -> Result<AsrOutput<'g, T>> {
        self.check_targets(targets)?;
        let x1 = self.encode(g, waveform)?;
        let mut tokens = Vec::with_capacity(targets.len() + 1);
        tokens.push(self.config.vocab.bos());
        tokens.extend_from_slice(targets);
        let logits = self.lm.forward(g, &self.store, x1, &tokens)?;
        Ok(AsrOutput { logits, x1 })
    }

    /// `E_Y`: rows of the LM embedding table for the targets. With
    /// `embed_grad == false` the table enters the graph as a constant.
    pub fn target_embeddings<'g>(
        &self,
        g: &'g Graph<T>,
        targets: &[TokenId],
        embed_grad: bool,
    ) -> Result<Var<'g, T>> {
        self.check_targets(targets)?;
        let table = if embed_grad {
            g.param(&self.store, self.lm.embed)
        } else {
            g.input(self.store.value(self.lm.embed).clone())
        };
        let ids: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        Ok(g.gather_rows(table, &ids)?)
    }

    /// `targets ++ [EOS]` as class indices for [`cross_entropy`].
    pub fn targets_with_eos(&self, targets: &[TokenId]) -> Vec<usize> {
        targets
            .iter()
            .map(|&t| t as usize)
            .chain(std::iter::once(self.eos() as usize))
            .collect()
    }

    pub fn adapter_ids(&self) -> Vec<ParamId> {
        self.adapter.ids()
    }
}

/// Mean over positions of `−log softmax(logits)[target]`.
pub fn cross_entropy<'g, T: Scalar>(logits: Var<'g, T>, targets_with_eos: &[usize]) -> Result<Var<'g, T>> {
    let rows = logits.value().rows();
    if rows != targets_with_eos.len() {
        return Err(TensorError::DimMismatch {
            op: "cross_entropy",
            lhs: logits.shape(),
            rhs: vec![targets_with_eos.len()],
        }
        .into());
    }
    Ok(logits.cross_entropy(targets_with_eos)?)
}

/// Parameters the optimizer updates, in registration order. Fails if any
/// adapter parameter has been frozen, since every scheme trains the adapter.
pub fn trainable_parameters<T: Scalar>(model: &BridgeModel<T>) -> Result<Vec<ParamId>> {
    if let Some(&id) = model.adapter_ids().iter().find(|&&id| !model.store.is_trainable(id)) {
        return Err(ModelError::UnsupportedScheme(format!(
            "adapter parameter {} is frozen; the adapter must always train",
            model.store.get(id).name()
        )));
    }
    Ok(model.store.trainable_ids())
}
