use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dequantize, quantize, utterance_rng, write_wav, DataError, Example, Manifest, Result, Utterance, Waveform};

/// Tone corpus: every word `w{i}` is a fixed-length segment of a sinusoid
/// at its own frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub utt_count: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub sample_rate: u32,
    pub samples_per_token: usize,
    pub noise_sigma: f64,
    pub nonspeech_fraction: f64,
    pub amplitude: f64,
    /// Fixes the word-to-frequency map; splits of one task share it while
    /// their utterance seeds differ.
    pub tone_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            utt_count: 200,
            min_tokens: 1,
            max_tokens: 4,
            sample_rate: 2000,
            samples_per_token: 100,
            noise_sigma: 0.05,
            nonspeech_fraction: 0.0,
            amplitude: 0.5,
            tone_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synth config: {m}")));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if self.sample_rate == 0 || self.samples_per_token == 0 {
            return bad("sample_rate and samples_per_token must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.nonspeech_fraction) {
            return bad("nonspeech_fraction must be in [0, 1]");
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return bad("amplitude must be in (0, 1]");
        }
        Ok(())
    }

    fn nonspeech_count(&self) -> usize {
        (self.nonspeech_fraction * self.utt_count as f64).round() as usize
    }
}

/// A seeded permutation of `vocab_size` log-spaced frequencies between
/// `sr/25` and `0.4·sr`.
pub fn token_frequencies(vocab_size: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let (lo, hi) = (sample_rate as f64 / 25.0, sample_rate as f64 * 0.4);
    let mut f: Vec<f64> = (0..vocab_size)
        .map(|i| {
            let t = if vocab_size == 1 { 0.0 } else { i as f64 / (vocab_size - 1) as f64 };
            lo * (hi / lo).powf(t)
        })
        .collect();
    f.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    f
}

/// Concatenated tone segments (phase restarts at every segment) plus noise.
pub fn render_tokens(tokens: &[usize], freqs: &[f64], cfg: &SynthConfig, rng: &mut impl Rng) -> Waveform {
    let sr = cfg.sample_rate as f64;
    let mut samples = Vec::with_capacity(tokens.len() * cfg.samples_per_token);
    for &t in tokens {
        for n in 0..cfg.samples_per_token {
            samples.push(cfg.amplitude * (TAU * freqs[t] * n as f64 / sr).sin());
        }
    }
    finish(samples, cfg, rng)
}

fn finish(mut samples: Vec<f64>, cfg: &SynthConfig, rng: &mut impl Rng) -> Waveform {
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        for s in &mut samples {
            *s += noise.sample(rng);
        }
    }
    // Quantised here so in-memory and on-disk corpora agree exactly.
    let samples = samples
        .into_iter()
        .map(|s| dequantize(quantize(s.clamp(-1.0, 1.0) as f32)))
        .collect();
    Waveform::new(samples, cfg.sample_rate)
}

/// Low-passed white noise or a mixture of two to four sines, normalised to
/// the configured amplitude.
fn render_nonspeech(cfg: &SynthConfig, rng: &mut impl Rng) -> Waveform {
    let n_tok = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let len = n_tok * cfg.samples_per_token;
    let sr = cfg.sample_rate as f64;
    let mut x: Vec<f64> = if rng.random_bool(0.5) {
        let coef: f64 = rng.random_range(0.5..0.95);
        let white = Normal::new(0.0, 1.0).expect("unit normal");
        let mut y = 0.0;
        (0..len)
            .map(|_| {
                y = coef * y + (1.0 - coef) * white.sample(rng);
                y
            })
            .collect()
    } else {
        let parts: Vec<(f64, f64)> = (0..rng.random_range(2..=4))
            .map(|_| (rng.random_range(0.02 * sr..0.45 * sr), rng.random_range(0.0..TAU)))
            .collect();
        (0..len)
            .map(|n| parts.iter().map(|(f, ph)| (TAU * f * n as f64 / sr + ph).sin()).sum())
            .collect()
    };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut x {
            *v *= cfg.amplitude / peak;
        }
    }
    finish(x, cfg, rng)
}

/// In-memory corpus; utterance `i` depends only on `(seed, i)` and the config.
pub fn synth_examples(cfg: &SynthConfig, seed: u64, name: &str) -> Result<Vec<Example>> {
    cfg.validate()?;
    let freqs = token_frequencies(cfg.vocab_size, cfg.sample_rate, cfg.tone_seed);
    let mut order: Vec<usize> = (0..cfg.utt_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5ec7));
    let mut nonspeech = vec![false; cfg.utt_count];
    for &i in &order[..cfg.nonspeech_count()] {
        nonspeech[i] = true;
    }
    Ok((0..cfg.utt_count)
        .map(|i| {
            let mut rng = utterance_rng(seed, i as u64);
            let (text, wave) = if nonspeech[i] {
                (String::new(), render_nonspeech(cfg, &mut rng))
            } else {
                let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
                let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
                let text = tokens.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
                (text, render_tokens(&tokens, &freqs, cfg, &mut rng))
            };
            Example {
                id: format!("{name}_{i:05}"),
                text,
                wave,
            }
        })
        .collect())
}

/// Writes `<dir>/<name>.jsonl` and `<dir>/<name>/<id>.wav`.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64, name: &str, dir: &Path) -> Result<Manifest> {
    let examples = synth_examples(cfg, seed, name)?;
    let audio_dir = dir.join(name);
    fs::create_dir_all(&audio_dir).map_err(|e| DataError::io(&audio_dir, e))?;
    let mut manifest = Manifest::new(dir);
    for ex in &examples {
        let rel = format!("{name}/{}.wav", ex.id);
        write_wav(&dir.join(&rel), &ex.wave)?;
        manifest.utterances.push(Utterance {
            audio_path: rel,
            text: ex.text.clone(),
            duration_s: ex.wave.duration_s(),
        });
    }
    manifest.write(&dir.join(format!("{name}.jsonl")))?;
    Ok(manifest)
}
