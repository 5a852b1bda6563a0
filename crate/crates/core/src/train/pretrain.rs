use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{utterance_rng, Adam, Result, TrainError, CLIP_NORM};
use crate::model::checkpoint::ParamSet;
use crate::model::{cross_entropy, BridgeModel, TokenId};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

const PRETRAIN_SALT: u64 = 0x9e7a_a100;

/// Warm start for the frozen LM: it learns to transcribe prefixes made of
/// noisy, repeated copies of its own token embeddings, and to emit EOS at
/// once for pure-noise prefixes. This stands in for the pretrained LLM's
/// ability to read an input prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmPretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_tokens: usize,
    /// Prefix frames per token, drawn uniformly from this range.
    pub frames: (usize, usize),
    /// Noise std relative to the embedding std.
    pub noise: f64,
    pub empty_fraction: f64,
    /// Restrict sequences to the first `content_tokens` words (0 = all).
    pub content_tokens: usize,
}

impl Default for LmPretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 3e-3,
            max_tokens: 4,
            frames: (2, 4),
            noise: 0.5,
            empty_fraction: 0.1,
            content_tokens: 0,
        }
    }
}

/// LM base parameters: the embedding table, blocks and final norm, without
/// any LoRA factors.
pub fn lm_base_ids<T: Scalar>(model: &BridgeModel<T>) -> Vec<ParamId> {
    model.lm.base_ids()
}

/// Trains only the LM base on the synthetic prefix-reading task; all
/// trainable flags are left as they were. Depends on `seed` and `cfg` only,
/// so every scheme built from the same seed ends with the same LM.
pub fn pretrain_lm<T: Scalar>(model: &mut BridgeModel<T>, cfg: &LmPretrainConfig, seed: u64) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 || cfg.max_tokens == 0 || cfg.frames.0 == 0 || cfg.frames.0 > cfg.frames.1 {
        return Err(TrainError::Config("invalid LM warm-start configuration".into()));
    }
    let vocab = model.config.vocab;
    let content = match cfg.content_tokens {
        0 => vocab.content,
        n => n.min(vocab.content),
    };
    let ids = lm_base_ids(model);
    let saved: Vec<(ParamId, bool)> = model.store.ids().map(|id| (id, model.store.is_trainable(id))).collect();
    model.store.set_all_trainable(false);
    for &id in &ids {
        model.store.set_trainable(id, true);
    }
    let result = run(model, cfg, seed, content, ids);
    for (id, t) in saved {
        model.store.set_trainable(id, t);
    }
    model.store.zero_grads();
    result
}

fn run<T: Scalar>(
    model: &mut BridgeModel<T>,
    cfg: &LmPretrainConfig,
    seed: u64,
    content: usize,
    ids: Vec<ParamId>,
) -> Result<Vec<f64>> {
    let vocab = model.config.vocab;
    let d = model.config.lm.d_llm;
    let mut adam = Adam::new(model, ids);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        model.store.zero_grads();
        let mut total = 0.0;
        for slot in 0..cfg.batch_size {
            let mut rng = utterance_rng(seed ^ PRETRAIN_SALT, (step * cfg.batch_size + slot) as u64);
            let n = if rng.random_bool(cfg.empty_fraction) {
                0
            } else {
                rng.random_range(1..=cfg.max_tokens)
            };
            let tokens: Vec<TokenId> = (0..n).map(|_| rng.random_range(0..content) as TokenId).collect();
            let table = model.store.value(model.lm.embed).clone();
            let mut rows = Vec::new();
            if n == 0 {
                for _ in 0..rng.random_range(cfg.frames.0..=cfg.frames.1 * 2) {
                    rows.extend((0..d).map(|_| T::lit(unit.sample(&mut rng))));
                }
            }
            for &t in &tokens {
                for _ in 0..rng.random_range(cfg.frames.0..=cfg.frames.1) {
                    rows.extend(
                        table
                            .row(t as usize)
                            .iter()
                            .map(|&e| T::lit(e.as_f64() + cfg.noise * unit.sample(&mut rng))),
                    );
                }
            }
            let frames = rows.len() / d;
            let g = Graph::new();
            let prefix = g.input(Tensor::new(vec![frames, d], rows)?);
            let mut with_bos = vec![vocab.bos()];
            with_bos.extend_from_slice(&tokens);
            let logits = model.lm.forward(&g, &model.store, prefix, &with_bos)?;
            let ce = cross_entropy(logits, &model.targets_with_eos(&tokens))?;
            let v = ce.value().data()[0].as_f64();
            if !v.is_finite() {
                return Err(TrainError::NonFinite { step, lr: cfg.lr });
            }
            total += v / cfg.batch_size as f64;
            let grads = g.backward(ce.scale(1.0 / cfg.batch_size as f64))?;
            model.store.accumulate(&grads);
        }
        adam.step(model, cfg.lr, CLIP_NORM);
        losses.push(total);
    }
    Ok(losses)
}

/// Current values of the LM base parameters, for reuse across schemes via
/// [`checkpoint::apply_partial`](crate::model::checkpoint::apply_partial).
pub fn lm_snapshot<T: Scalar>(model: &BridgeModel<T>) -> ParamSet<T> {
    lm_base_ids(model)
        .into_iter()
        .map(|id| {
            let p = model.store.get(id);
            (p.name().to_string(), p.value().clone())
        })
        .collect()
}
