use std::collections::HashMap;

use super::{BridgeModel, Result, TokenId};
use crate::decode::{beam_search, DecodeError, DecodeParams, Hypothesis, Scorer};
use crate::layers::{sinusoid_positions, LayerNorm, Linear, TransformerBlock, LN_EPS};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{self, gelu_scalar, layer_norm_rows, log_softmax_slice, matmul_t, Tensor};

#[derive(Debug, Clone)]
struct Dense<T: Scalar> {
    w: Tensor<T>,
    b: Option<Vec<T>>,
}

impl<T: Scalar> Dense<T> {
    fn from_linear(lin: &Linear, store: &ParamStore<T>) -> Result<Self> {
        Ok(Self {
            w: lin.merged_weight(store)?,
            b: lin.bias.map(|b| store.value(b).data().to_vec()),
        })
    }

    fn apply(&self, x: &Tensor<T>) -> tensor::Result<Tensor<T>> {
        let y = matmul_t(x, &self.w)?;
        match &self.b {
            Some(b) => y.add_row(b),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
struct Norm<T: Scalar> {
    gamma: Vec<T>,
    beta: Vec<T>,
}

impl<T: Scalar> Norm<T> {
    fn from_layer(ln: &LayerNorm, store: &ParamStore<T>) -> Self {
        Self {
            gamma: store.value(ln.gamma).data().to_vec(),
            beta: store.value(ln.beta).data().to_vec(),
        }
    }

    fn apply(&self, x: &Tensor<T>) -> tensor::Result<Tensor<T>> {
        layer_norm_rows(x, &self.gamma, &self.beta, T::lit(LN_EPS))
    }
}

#[derive(Debug, Clone)]
struct Block<T: Scalar> {
    ln1: Norm<T>,
    q: Dense<T>,
    k: Dense<T>,
    v: Dense<T>,
    o: Dense<T>,
    ln2: Norm<T>,
    ff1: Dense<T>,
    ff2: Dense<T>,
    heads: usize,
}

impl<T: Scalar> Block<T> {
    fn from_block(b: &TransformerBlock, store: &ParamStore<T>) -> Result<Self> {
        Ok(Self {
            ln1: Norm::from_layer(&b.ln1, store),
            q: Dense::from_linear(&b.attn.q, store)?,
            k: Dense::from_linear(&b.attn.k, store)?,
            v: Dense::from_linear(&b.attn.v, store)?,
            o: Dense::from_linear(&b.attn.o, store)?,
            ln2: Norm::from_layer(&b.ln2, store),
            ff1: Dense::from_linear(&b.ff1, store)?,
            ff2: Dense::from_linear(&b.ff2, store)?,
            heads: b.spec.heads,
        })
    }
}

/// Cached keys and values (`[len × d]` per layer, row-major).
#[derive(Debug, Clone, Default)]
pub struct LmState<T: Scalar> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> LmState<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Frozen copy of a bridge's LM with LoRA folded into the base weights,
/// evaluated incrementally with a key/value cache.
#[derive(Debug, Clone)]
pub struct InferenceLm<T: Scalar> {
    embed: Tensor<T>,
    blocks: Vec<Block<T>>,
    ln_f: Norm<T>,
    d: usize,
}

impl<T: Scalar> InferenceLm<T> {
    pub fn from_model(model: &BridgeModel<T>) -> Result<Self> {
        let store = &model.store;
        Ok(Self {
            embed: store.value(model.lm.embed).clone(),
            blocks: model
                .lm
                .blocks
                .iter()
                .map(|b| Block::from_block(b, store))
                .collect::<Result<_>>()?,
            ln_f: Norm::from_layer(&model.lm.ln_f, store),
            d: model.lm.d,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    /// Runs `x` (already position-encoded) through every block. New rows see
    /// the whole cache; among themselves they see each other fully when
    /// `bidirectional`, otherwise causally.
    fn extend(&self, state: &mut LmState<T>, mut x: Tensor<T>, bidirectional: bool) -> tensor::Result<Tensor<T>> {
        let n = x.rows();
        let d = self.d;
        if state.keys.is_empty() {
            state.keys = vec![Vec::new(); self.blocks.len()];
            state.values = vec![Vec::new(); self.blocks.len()];
        }
        let start = state.len;
        for (li, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.apply(&x)?;
            let q = b.q.apply(&h)?;
            state.keys[li].extend_from_slice(b.k.apply(&h)?.data());
            state.values[li].extend_from_slice(b.v.apply(&h)?.data());
            let (keys, values) = (&state.keys[li], &state.values[li]);
            let dh = d / b.heads;
            let scale = T::lit(1.0 / (dh as f64).sqrt());
            let mut attn = vec![T::zero(); n * d];
            let mut scores = Vec::new();
            for i in 0..n {
                let visible = if bidirectional { start + n } else { start + i + 1 };
                for hd in 0..b.heads {
                    let qs = &q.row(i)[hd * dh..(hd + 1) * dh];
                    scores.clear();
                    scores.extend((0..visible).map(|j| {
                        let ks = &keys[j * d + hd * dh..j * d + (hd + 1) * dh];
                        qs.iter().zip(ks).map(|(&a, &c)| a * c).sum::<T>() * scale
                    }));
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let out = &mut attn[i * d + hd * dh..i * d + (hd + 1) * dh];
                    for (j, &wj) in scores.iter().enumerate() {
                        let p = wj / total;
                        let vs = &values[j * d + hd * dh..j * d + (hd + 1) * dh];
                        for (o, &v) in out.iter_mut().zip(vs) {
                            *o += p * v;
                        }
                    }
                }
            }
            let attn = b.o.apply(&Tensor::new(vec![n, d], attn)?)?;
            x = x.add(&attn)?;
            let h = b.ln2.apply(&x)?;
            let f = b.ff2.apply(&b.ff1.apply(&h)?.map(gelu_scalar))?;
            x = x.add(&f)?;
        }
        state.len += n;
        Ok(x)
    }

    fn log_probs_of_last(&self, x: &Tensor<T>) -> tensor::Result<Vec<f64>> {
        let last = x.slice_rows(x.rows() - 1, x.rows())?;
        let h = self.ln_f.apply(&last)?;
        let logits = matmul_t(&h, &self.embed)?.scale(T::lit(1.0 / (self.d as f64).sqrt()));
        Ok(log_softmax_slice(logits.data()).into_iter().map(T::as_f64).collect())
    }

    /// Feeds the audio prefix `[T_a × d]` at positions `0..T_a`.
    pub fn start(&self, prefix: &Tensor<T>) -> Result<LmState<T>> {
        let mut state = LmState::default();
        let pos = sinusoid_positions(prefix.rows(), self.d, 0);
        self.extend(&mut state, prefix.add(&pos)?, true)?;
        Ok(state)
    }

    /// Appends one token; returns the next-token log-distribution.
    pub fn step(&self, state: &mut LmState<T>, token: TokenId) -> Result<Vec<f64>> {
        let emb = self.embed.slice_rows(token as usize, token as usize + 1)?;
        let x = emb.add(&sinusoid_positions(1, self.d, state.len))?;
        let out = self.extend(state, x, false)?;
        Ok(self.log_probs_of_last(&out)?)
    }
}

/// Prefix scorer over one utterance. States are cached by token prefix and
/// only the two most recent lengths are kept, which is what beam search needs.
#[derive(Debug)]
pub struct BridgeScorer<'m, T: Scalar> {
    lm: &'m InferenceLm<T>,
    eos: TokenId,
    root: (LmState<T>, Vec<f64>),
    cache: HashMap<Vec<TokenId>, (LmState<T>, Vec<f64>)>,
    newest: usize,
}

impl<'m, T: Scalar> BridgeScorer<'m, T> {
    /// `x1` is the adapter output for the utterance; BOS is fed immediately.
    pub fn new(lm: &'m InferenceLm<T>, x1: &Tensor<T>, bos: TokenId, eos: TokenId) -> Result<Self> {
        let mut state = lm.start(x1)?;
        let lp = lm.step(&mut state, bos)?;
        Ok(Self {
            lm,
            eos,
            root: (state, lp),
            cache: HashMap::new(),
            newest: 0,
        })
    }

    fn entry(&mut self, prefix: &[TokenId]) -> Result<(LmState<T>, Vec<f64>)> {
        if prefix.is_empty() {
            return Ok(self.root.clone());
        }
        if let Some(e) = self.cache.get(prefix) {
            return Ok(e.clone());
        }
        let (mut state, _) = self.entry(&prefix[..prefix.len() - 1])?;
        let lp = self.lm.step(&mut state, prefix[prefix.len() - 1])?;
        if prefix.len() > self.newest {
            self.newest = prefix.len();
            let keep = self.newest.saturating_sub(1);
            self.cache.retain(|k, _| k.len() >= keep);
        }
        self.cache.insert(prefix.to_vec(), (state.clone(), lp.clone()));
        Ok((state, lp))
    }
}

impl<T: Scalar> Scorer for BridgeScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.lm.vocab_size()
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn log_probs(&mut self, prefix: &[TokenId]) -> std::result::Result<Vec<f64>, DecodeError> {
        self.entry(prefix)
            .map(|(_, lp)| lp)
            .map_err(|e| DecodeError::Scorer(e.to_string()))
    }
}

/// Waveform-to-hypotheses with the LoRA-merged LM built once per model.
#[derive(Debug)]
pub struct Recognizer<'m, T: Scalar> {
    model: &'m BridgeModel<T>,
    lm: InferenceLm<T>,
}

impl<'m, T: Scalar> Recognizer<'m, T> {
    pub fn new(model: &'m BridgeModel<T>) -> Result<Self> {
        Ok(Self {
            model,
            lm: InferenceLm::from_model(model)?,
        })
    }

    pub fn adapter_output(&self, waveform: &[T]) -> Result<Tensor<T>> {
        let g = crate::tensor::Graph::new();
        let x1 = self.model.encode(&g, waveform)?;
        Ok((*x1.value()).clone())
    }

    /// Ranked hypotheses for one utterance.
    pub fn recognize(&self, waveform: &[T], params: &DecodeParams) -> Result<Vec<Hypothesis>> {
        let x1 = self.adapter_output(waveform)?;
        let vocab = self.model.config.vocab;
        let mut scorer = BridgeScorer::new(&self.lm, &x1, vocab.bos(), vocab.eos())?;
        Ok(beam_search(&mut scorer, params)?)
    }

    /// Text of the best hypothesis.
    pub fn transcribe(&self, waveform: &[T], params: &DecodeParams) -> Result<String> {
        let best = self.recognize(waveform, params)?;
        Ok(self.model.config.vocab.decode(&best[0].tokens))
    }
}
