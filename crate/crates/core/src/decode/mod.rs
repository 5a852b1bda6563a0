//! Beam search with a no-repeat-n-gram constraint and length penalty, and an
//! exhaustive search used to check it on small vocabularies.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::TokenId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("scorer returned {got} log-probabilities, expected {expected}")]
    WrongSize { expected: usize, got: usize },
    #[error("search space of {0} sequences exceeds the exhaustive-search limit")]
    TooLarge(u128),
    #[error("invalid decoding parameters: {0}")]
    Params(String),
    #[error("every continuation has zero probability")]
    NoHypothesis,
    #[error("scorer failed: {0}")]
    Scorer(String),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// Upper bound on the number of sequences [`exhaustive_decode`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub beam_size: usize,
    pub max_length: usize,
    /// No-repeat-n-gram size; 0 disables the constraint.
    pub nrns: usize,
    pub length_penalty: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_length: 256,
            nrns: 0,
            length_penalty: 1.0,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_length == 0 {
            return Err(DecodeError::Params(
                "beam size and max length must be at least 1".into(),
            ));
        }
        if !self.length_penalty.is_finite() {
            return Err(DecodeError::Params("length penalty must be finite".into()));
        }
        Ok(())
    }
}

/// Maps a token prefix (BOS excluded) to next-token log-probabilities.
pub trait Scorer {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> TokenId;
    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

/// Wraps a closure as a [`Scorer`].
pub struct FnScorer<F> {
    pub vocab_size: usize,
    pub eos: TokenId,
    pub f: F,
}

impl<F: FnMut(&[TokenId]) -> Vec<f64>> Scorer for FnScorer<F> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn log_probs(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok((self.f)(prefix))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, ending in EOS unless cut off at `max_length`.
    pub tokens: Vec<TokenId>,
    pub sum_logprob: f64,
    pub finished: bool,
    /// `sum_logprob / len^lp`.
    pub score: f64,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn text_tokens(&self, eos: TokenId) -> &[TokenId] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Tokens that would complete an n-gram already present in `tokens`.
pub fn banned_tokens(tokens: &[TokenId], n: usize) -> Vec<TokenId> {
    if n == 0 || tokens.len() + 1 < n {
        return Vec::new();
    }
    let ctx = &tokens[tokens.len() + 1 - n..];
    let mut banned: Vec<TokenId> = tokens
        .windows(n)
        .filter(|w| &w[..n - 1] == ctx)
        .map(|w| w[n - 1])
        .collect();
    banned.sort_unstable();
    banned.dedup();
    banned
}

/// Sets the log-probability of every [`banned_tokens`] entry to `-inf`.
pub fn ban_repeated_ngrams(tokens: &[TokenId], n: usize, logprobs: &[f64]) -> Vec<f64> {
    let mut out = logprobs.to_vec();
    for t in banned_tokens(tokens, n) {
        if let Some(v) = out.get_mut(t as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
    out
}

/// `sum_logprob / length^lp`; the length counts EOS.
pub fn finalize_score(sum_logprob: f64, length: usize, lp: f64) -> f64 {
    sum_logprob / (length.max(1) as f64).powf(lp)
}

/// True if some n-gram occurs twice in `tokens`.
pub fn has_repeated_ngram(tokens: &[TokenId], n: usize) -> bool {
    if n == 0 || tokens.len() < n {
        return false;
    }
    let mut seen: Vec<&[TokenId]> = tokens.windows(n).collect();
    let before = seen.len();
    seen.sort_unstable();
    seen.dedup();
    seen.len() != before
}

fn rank_final(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn checked_log_probs<S: Scorer + ?Sized>(scorer: &mut S, prefix: &[TokenId]) -> Result<Vec<f64>> {
    let lp = scorer.log_probs(prefix)?;
    if lp.len() != scorer.vocab_size() {
        return Err(DecodeError::WrongSize {
            expected: scorer.vocab_size(),
            got: lp.len(),
        });
    }
    Ok(lp)
}

/// Best final score any continuation of a live hypothesis could still reach,
/// given that log-probabilities are never positive.
fn optimistic_bound(sum: f64, len: usize, params: &DecodeParams) -> f64 {
    let lp = params.length_penalty;
    let best_len = if lp > 0.0 { params.max_length } else { len + 1 };
    finalize_score(sum, best_len, lp)
}

/// Standard beam search; see [`DecodeParams`]. Returns finished hypotheses
/// (including any cut off at `max_length`) best first.
pub fn beam_search<S: Scorer + ?Sized>(scorer: &mut S, params: &DecodeParams) -> Result<Vec<Hypothesis>> {
    params.validate()?;
    let eos = scorer.eos();
    let beam = params.beam_size;
    let lp = params.length_penalty;
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    let push_finished = |pool: &mut Vec<Hypothesis>, h: Hypothesis| {
        pool.push(h);
        pool.sort_by(rank_final);
        pool.truncate(beam);
    };

    for step in 0..params.max_length {
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (i, (tokens, sum)) in live.iter().enumerate() {
            let lps = ban_repeated_ngrams(tokens, params.nrns, &checked_log_probs(scorer, tokens)?);
            for (t, &l) in lps.iter().enumerate() {
                if l > f64::NEG_INFINITY && !l.is_nan() {
                    cands.push((sum + l, i, t as TokenId));
                }
            }
        }
        // Higher sum first; equal-length candidates then break ties by token order.
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.1].0.cmp(&live[b.1].0))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(2 * beam);

        let last_step = step + 1 == params.max_length;
        let mut next: Vec<(Vec<TokenId>, f64)> = Vec::with_capacity(beam);
        for (rank, &(sum, parent, t)) in cands.iter().enumerate() {
            let mut tokens = live[parent].0.clone();
            tokens.push(t);
            if t == eos {
                if rank < beam {
                    let score = finalize_score(sum, tokens.len(), lp);
                    push_finished(&mut finished, Hypothesis {
                        tokens,
                        sum_logprob: sum,
                        finished: true,
                        score,
                    });
                }
            } else {
                next.push((tokens, sum));
                if next.len() == beam {
                    break;
                }
            }
        }

        if last_step {
            for (tokens, sum) in next.drain(..) {
                let score = finalize_score(sum, tokens.len(), lp);
                push_finished(&mut finished, Hypothesis {
                    tokens,
                    sum_logprob: sum,
                    finished: true,
                    score,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if finished.len() == beam {
            let worst = finished.last().expect("pool is full").score;
            let len = step + 1;
            let best_live = live
                .iter()
                .map(|(_, s)| optimistic_bound(*s, len, params))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst >= best_live {
                break;
            }
        }
    }
    if finished.is_empty() {
        return Err(DecodeError::NoHypothesis);
    }
    Ok(finished)
}

/// Greedy decoding under the same constraint, for reference.
pub fn greedy_decode<S: Scorer + ?Sized>(scorer: &mut S, params: &DecodeParams) -> Result<Hypothesis> {
    params.validate()?;
    let eos = scorer.eos();
    let mut tokens = Vec::new();
    let mut sum = 0.0;
    while tokens.len() < params.max_length {
        let lps = ban_repeated_ngrams(&tokens, params.nrns, &checked_log_probs(scorer, &tokens)?);
        let (t, &l) = lps
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > f64::NEG_INFINITY)
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .ok_or(DecodeError::NoHypothesis)?;
        sum += l;
        tokens.push(t as TokenId);
        if t as TokenId == eos {
            break;
        }
    }
    let score = finalize_score(sum, tokens.len(), params.length_penalty);
    Ok(Hypothesis {
        tokens,
        sum_logprob: sum,
        finished: true,
        score,
    })
}

/// Enumerates every EOS-terminated or `max_length` sequence allowed by the
/// constraint and returns the best by final score (ties: shorter, then
/// lexicographically smaller).
pub fn exhaustive_decode<S: Scorer + ?Sized>(scorer: &mut S, params: &DecodeParams) -> Result<Hypothesis> {
    params.validate()?;
    let v = scorer.vocab_size() as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..params.max_length {
        level = level.saturating_mul(v);
        total = total.saturating_add(level);
        if total > EXHAUSTIVE_LIMIT {
            return Err(DecodeError::TooLarge(total));
        }
    }

    let mut best: Option<Hypothesis> = None;
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let eos = scorer.eos();
    let consider = |h: Hypothesis, best: &mut Option<Hypothesis>| {
        if best.as_ref().is_none_or(|b| rank_final(&h, b) == Ordering::Less) {
            *best = Some(h);
        }
    };
    while let Some((tokens, sum)) = stack.pop() {
        let lps = ban_repeated_ngrams(&tokens, params.nrns, &checked_log_probs(scorer, &tokens)?);
        for (t, &l) in lps.iter().enumerate() {
            if l == f64::NEG_INFINITY || l.is_nan() {
                continue;
            }
            let mut next = tokens.clone();
            next.push(t as TokenId);
            let s = sum + l;
            if t as TokenId == eos || next.len() == params.max_length {
                let score = finalize_score(s, next.len(), params.length_penalty);
                consider(
                    Hypothesis {
                        tokens: next,
                        sum_logprob: s,
                        finished: true,
                        score,
                    },
                    &mut best,
                );
            } else {
                stack.push((next, s));
            }
        }
    }
    best.ok_or(DecodeError::NoHypothesis)
}

#[cfg(test)]
mod tests;
