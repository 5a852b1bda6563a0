//! Adam training for any fine-tuning scheme, checkpoint selection and
//! averaging, and non-speech fine-tuning.

mod pretrain;

pub use pretrain::{lm_base_ids, lm_snapshot, pretrain_lm, LmPretrainConfig};

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{augment, mix_nset, split_validation, utterance_rng, AugmentPolicy, DataError, Example, Waveform};
use crate::decode::{DecodeParams, Hypothesis};
use crate::matchloss::{cross_attention, matching_loss, MatchLossConfig, MatchLossError};
use crate::metrics::{corpus_report, words, CorpusReport};
use crate::model::checkpoint::{self, CheckpointError, ParamSet};
use crate::model::{cross_entropy, trainable_parameters, BridgeModel, ModelError, Recognizer, TokenId};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorError};

pub const VALIDATION_FRACTION: f64 = 0.1;
pub const CLIP_NORM: f64 = 1.0;
const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
const ADAM_EPS: f64 = 1e-8;
const BATCH_SALT: u64 = 0xba7c_4000;
const AUGMENT_SALT: u64 = 0xa06_0000;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    MatchLoss(#[from] MatchLossError),
    #[error("non-finite loss at step {step} (lr {lr})")]
    NonFinite { step: usize, lr: f64 },
    #[error("need at least {need} checkpoints, have {have}")]
    TooFewCheckpoints { need: usize, have: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub checkpoint_every: usize,
    pub match_loss: Option<MatchLossConfig>,
    pub augment: Option<AugmentPolicy>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 100,
            checkpoint_every: 100,
            match_loss: None,
            augment: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(TrainError::Config("batch_size and checkpoint_every must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if let Some(m) = &self.match_loss {
            m.validate()?;
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then constant. `step` counts from 1.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub path: PathBuf,
    /// Mean per-utterance cross-entropy on the held-out split, unaugmented.
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub ce: f64,
    pub lm: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.ce + self.lm
    }
}

pub fn to_samples<T: Scalar>(w: &Waveform) -> Vec<T> {
    w.samples.iter().map(|&s| T::lit(s as f64)).collect()
}

fn targets_of<T: Scalar>(model: &BridgeModel<T>, text: &str) -> Result<Vec<TokenId>> {
    Ok(model.config.vocab.encode(text)?)
}

/// Forward pass for one utterance. The matching loss is skipped when the
/// transcript is empty. With `backward`, gradients are scaled by `weight`
/// and added to the store.
fn utterance_loss<T: Scalar>(
    model: &mut BridgeModel<T>,
    wave: &[T],
    targets: &[TokenId],
    match_loss: Option<&MatchLossConfig>,
    backward: Option<f64>,
) -> Result<LossParts> {
    let g = Graph::new();
    let out = model.forward_asr(&g, wave, targets)?;
    let ce = cross_entropy(out.logits, &model.targets_with_eos(targets))?;
    let mut parts = LossParts {
        ce: ce.value().data()[0].as_f64(),
        lm: 0.0,
    };
    let mut loss = ce;
    if let (Some(cfg), false) = (match_loss, targets.is_empty()) {
        let e = model.target_embeddings(&g, targets, cfg.embed_grad)?;
        let h = cross_attention(e, out.x1, model.config.lm.d_llm)?;
        let lm = matching_loss(e, h, cfg)?;
        parts.lm = lm.value().data()[0].as_f64();
        loss = loss.add(lm)?;
    }
    if let Some(w) = backward {
        let grads = g.backward(loss.scale(w))?;
        model.store.accumulate(&grads);
    }
    Ok(parts)
}

/// Mean per-utterance losses over `examples`, without augmentation.
pub fn evaluate_loss<T: Scalar>(
    model: &mut BridgeModel<T>,
    examples: &[Example],
    match_loss: Option<&MatchLossConfig>,
) -> Result<LossParts> {
    let mut sum = LossParts::default();
    for ex in examples {
        let targets = targets_of(model, &ex.text)?;
        let p = utterance_loss(model, &to_samples(&ex.wave), &targets, match_loss, None)?;
        sum.ce += p.ce;
        sum.lm += p.lm;
    }
    let n = examples.len().max(1) as f64;
    Ok(LossParts {
        ce: sum.ce / n,
        lm: sum.lm / n,
    })
}

struct Adam {
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new<T: Scalar>(model: &BridgeModel<T>, ids: Vec<ParamId>) -> Self {
        let zeros = |id: &ParamId| vec![0.0; model.store.value(*id).len()];
        Self {
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    fn grad_norm<T: Scalar>(&self, model: &BridgeModel<T>) -> f64 {
        self.ids
            .iter()
            .filter_map(|&id| model.store.grad(id))
            .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    /// One clipped update. Parameters without a gradient this step still
    /// advance their moments with a zero gradient.
    fn step<T: Scalar>(&mut self, model: &mut BridgeModel<T>, lr: f64, clip: f64) {
        let norm = self.grad_norm(model);
        let scale = if norm > clip { clip / norm } else { 1.0 };
        self.t += 1;
        let (b1, b2) = ADAM_BETAS;
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for (k, &id) in self.ids.iter().enumerate() {
            let grad: Vec<f64> = match model.store.grad(id) {
                Some(g) => g.iter().map(|x| x.as_f64() * scale).collect(),
                None => vec![0.0; self.m[k].len()],
            };
            if lr == 0.0 {
                for ((m, v), g) in self.m[k].iter_mut().zip(&mut self.v[k]).zip(&grad) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                }
                continue;
            }
            let value = model.store.value_mut(id).data_mut();
            for (((p, m), v), g) in value.iter_mut().zip(&mut self.m[k]).zip(&mut self.v[k]).zip(&grad) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let upd = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                *p = T::lit(p.as_f64() - upd);
            }
        }
    }
}

struct Log {
    out: Option<BufWriter<fs::File>>,
    path: PathBuf,
}

impl Log {
    fn line(&mut self, v: serde_json::Value) -> Result<()> {
        if let Some(w) = &mut self.out {
            writeln!(w, "{v}").map_err(io_err(&self.path))?;
        }
        Ok(())
    }
}

pub const TRAIN_LOG: &str = "train_log.jsonl";

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step:06}.bin"))
}

/// Trains the scheme's parameters on `examples` (a validation split is held
/// out by seed) and writes a checkpoint plus validation record every
/// `checkpoint_every` steps into `dir`, with a JSONL log alongside.
pub fn train<T: Scalar>(
    model: &mut BridgeModel<T>,
    examples: &[Example],
    cfg: &TrainConfig,
    dir: &Path,
) -> Result<Vec<CheckpointRecord>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    let ids = trainable_parameters(model)?;
    let (train_set, valid_set) = split_validation(examples, VALIDATION_FRACTION, cfg.seed);
    if train_set.is_empty() {
        return Err(TrainError::Config("no examples left after the validation split".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let log_path = dir.join(TRAIN_LOG);
    let mut log = Log {
        out: Some(BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?)),
        path: log_path,
    };
    let samples: Vec<Vec<T>> = train_set.iter().map(|e| to_samples(&e.wave)).collect();
    let targets: Vec<Vec<TokenId>> = train_set
        .iter()
        .map(|e| targets_of(model, &e.text))
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(model, ids);
    let mut records = Vec::new();
    let weight = 1.0 / cfg.batch_size as f64;
    for step in 1..=cfg.steps {
        let lr = cfg.lr_at(step);
        let mut pick = utterance_rng(cfg.seed ^ BATCH_SALT, step as u64);
        let mut sum = LossParts::default();
        model.store.zero_grads();
        for slot in 0..cfg.batch_size {
            let i = pick.random_range(0..train_set.len());
            let augmented;
            let wave = match &cfg.augment {
                Some(policy) => {
                    let mut rng = utterance_rng(cfg.seed ^ AUGMENT_SALT, (step * cfg.batch_size + slot) as u64);
                    augmented = to_samples(&augment(&train_set[i].wave, policy, &mut rng)?);
                    &augmented
                }
                None => &samples[i],
            };
            let p = match utterance_loss(model, wave, &targets[i], cfg.match_loss.as_ref(), Some(weight)) {
                Err(TrainError::Model(ModelError::Tensor(TensorError::DegenerateRow { .. }))) => {
                    return Err(TrainError::NonFinite { step, lr });
                }
                r => r?,
            };
            if !p.total().is_finite() {
                return Err(TrainError::NonFinite { step, lr });
            }
            sum.ce += p.ce * weight;
            sum.lm += p.lm * weight;
        }
        if !adam.grad_norm(model).is_finite() {
            return Err(TrainError::NonFinite { step, lr });
        }
        adam.step(model, lr, CLIP_NORM);
        log.line(json!({"step": step, "train_loss": sum.total(), "ce": sum.ce, "lm": sum.lm, "lr": lr}))?;

        if step % cfg.checkpoint_every == 0 {
            let val = evaluate_loss(model, &valid_set, cfg.match_loss.as_ref())?;
            log.line(json!({"step": step, "val_ce": val.ce, "val_lm": val.lm}))?;
            let path = checkpoint_path(dir, step);
            checkpoint::save(&model.store, &path)?;
            records.push(CheckpointRecord {
                step,
                path,
                validation_loss: val.ce,
            });
        }
    }
    model.store.zero_grads();
    if let Some(mut w) = log.out.take() {
        w.flush().map_err(io_err(&log.path))?;
    }
    Ok(records)
}

/// The `k` consecutive records (by step) with the lowest mean validation
/// loss; the earliest window wins ties.
pub fn select_best_window(records: &[CheckpointRecord], k: usize) -> Result<Vec<CheckpointRecord>> {
    if k == 0 || records.len() < k {
        return Err(TrainError::TooFewCheckpoints {
            need: k.max(1),
            have: records.len(),
        });
    }
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.step);
    let mut best = (f64::INFINITY, 0);
    for start in 0..=sorted.len() - k {
        let mean = sorted[start..start + k].iter().map(|r| r.validation_loss).sum::<f64>() / k as f64;
        if mean < best.0 {
            best = (mean, start);
        }
    }
    Ok(sorted[best.1..best.1 + k].to_vec())
}

/// Elementwise mean of the checkpoints at `paths`.
pub fn average_checkpoints<T: Scalar>(paths: &[PathBuf]) -> Result<ParamSet<T>> {
    let sets = paths.iter().map(|p| checkpoint::load::<T>(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(checkpoint::average(&sets)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsetConfig {
    /// Fraction of the mixed corpus that is non-speech.
    pub ratio: f64,
    pub steps: usize,
    pub lr_scale: f64,
    pub checkpoint_every: usize,
}

impl NsetConfig {
    /// A tenth of the original steps at a tenth of its learning rate.
    pub fn from_base(base: &TrainConfig) -> Self {
        let steps = base.steps / 10;
        Self {
            ratio: 0.1,
            steps,
            lr_scale: 0.1,
            checkpoint_every: (steps / 5).max(1),
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            lr: base.lr * self.lr_scale,
            warmup_steps: 0,
            checkpoint_every: self.checkpoint_every,
            ..base.clone()
        }
    }
}

/// Continues training on `train` mixed with empty-transcript non-speech.
pub fn nset_finetune<T: Scalar>(
    model: &mut BridgeModel<T>,
    train_set: &[Example],
    nonspeech: &[Example],
    base: &TrainConfig,
    nset: &NsetConfig,
    dir: &Path,
) -> Result<Vec<CheckpointRecord>> {
    let mixed = mix_nset(train_set, nonspeech, nset.ratio, base.seed)?;
    train(model, &mixed, &nset.train_config(base), dir)
}

/// One decoded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub id: String,
    pub reference: String,
    pub text: String,
    pub best: Hypothesis,
}

/// Decodes every example with the model's merged LM.
pub fn decode_examples<T: Scalar>(
    model: &BridgeModel<T>,
    examples: &[Example],
    params: &DecodeParams,
) -> Result<Vec<Decoded>> {
    let rec = Recognizer::new(model)?;
    examples
        .iter()
        .map(|ex| {
            let hyps = rec.recognize(&to_samples(&ex.wave), params)?;
            let best = hyps.into_iter().next().ok_or(ModelError::Decode(crate::decode::DecodeError::NoHypothesis))?;
            Ok(Decoded {
                id: ex.id.clone(),
                reference: ex.text.clone(),
                text: model.config.vocab.decode(&best.tokens),
                best,
            })
        })
        .collect()
}

/// Pooled WER/IER of decoded utterances against their references.
pub fn score(set: &str, decoded: &[Decoded]) -> CorpusReport {
    corpus_report(set, decoded.iter().map(|d| (words(&d.reference), words(&d.text))))
}

/// Fraction of utterances whose best hypothesis is empty.
pub fn empty_rate(decoded: &[Decoded]) -> f64 {
    if decoded.is_empty() {
        return 0.0;
    }
    decoded.iter().filter(|d| d.text.is_empty()).count() as f64 / decoded.len() as f64
}

/// Loads a parameter set into the model, strictly by name and shape.
pub fn load_into<T: Scalar>(model: &mut BridgeModel<T>, params: &ParamSet<T>) -> Result<()> {
    Ok(checkpoint::apply(&mut model.store, params)?)
}
