use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use asr_bridge::data::{synth_corpus, AugmentPolicy, Manifest, SynthConfig};
use asr_bridge::decode::DecodeParams;
use asr_bridge::matchloss::MatchLossConfig;
use asr_bridge::metrics::{corpus_report, words};
use asr_bridge::model::checkpoint;
use asr_bridge::model::{count_params, published_components, reported_total_millions, BridgeConfig, BridgeModel, FinetuneScheme};
use asr_bridge::train::{
    average_checkpoints, decode_examples, load_into, nset_finetune, pretrain_lm, select_best_window, train,
    CheckpointRecord, LmPretrainConfig, NsetConfig, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::args::{scheme_name, AverageArgs, CountArgs, DecodeArgs, Dims, EvalArgs, NsetArgs, Optim, SynthArgs, TrainArgs};
use crate::config;

/// A bad flag value or combination, as opposed to bad input data.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

pub const MODEL_JSON: &str = "model.json";
pub const RECORDS_JSON: &str = "checkpoints.json";

/// What is needed to rebuild a model before loading a checkpoint into it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub preset: String,
    pub scheme: FinetuneScheme,
    pub config: BridgeConfig,
}

impl ModelSpec {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn spec_path(explicit: &Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join(MODEL_JSON))
}

/// Rebuilds the model described by `spec` and loads `checkpoint` into it.
fn load_model(spec: &ModelSpec, checkpoint: &Path) -> Result<BridgeModel<f32>> {
    let mut model = BridgeModel::build(&spec.config, spec.scheme, 0)?;
    let params = checkpoint::load::<f32>(checkpoint)?;
    load_into(&mut model, &params).with_context(|| format!("loading {}", checkpoint.display()))?;
    Ok(model)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        vocab_size: a.vocab_size,
        utt_count: a.utts,
        min_tokens: a.min_tokens,
        max_tokens: a.max_tokens,
        sample_rate: a.sample_rate,
        samples_per_token: a.samples_per_token,
        noise_sigma: a.noise_sigma,
        nonspeech_fraction: a.nonspeech_fraction,
        amplitude: a.amplitude,
        tone_seed: a.tone_seed,
    };
    cfg.validate().map_err(usage)?;
    create_dir(&a.out)?;
    let m = synth_corpus(&cfg, a.seed, &a.name, &a.out)?;
    config::write(&a.out.join(format!("{}.config", a.name)), "synth", a)?;
    let speech = m.utterances.iter().filter(|u| !u.is_nonspeech()).count();
    println!("{}: {} utterances ({} speech, {} non-speech)", a.name, m.len(), speech, m.len() - speech);
    Ok(())
}

fn train_config(o: &Optim, steps: usize, warmup: usize, every: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: o.batch_size,
        lr: o.lr,
        warmup_steps: warmup,
        checkpoint_every: every,
        match_loss: o.match_loss.0.map(|(a, b)| MatchLossConfig {
            a,
            b,
            ..MatchLossConfig::default()
        }),
        augment: o.augment.is_on().then(AugmentPolicy::default),
        seed: o.seed,
    }
}

fn write_records(dir: &Path, records: &[CheckpointRecord]) -> Result<()> {
    let path = dir.join(RECORDS_JSON);
    fs::write(&path, serde_json::to_string_pretty(records)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn report_records(records: &[CheckpointRecord]) {
    if let Some(best) = records.iter().min_by(|a, b| a.validation_loss.total_cmp(&b.validation_loss)) {
        println!(
            "{} checkpoints; lowest validation CE {:.4} at step {}",
            records.len(),
            best.validation_loss,
            best.step
        );
    }
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(&a.optim, a.steps, a.warmup_steps, a.checkpoint_every);
    cfg.validate().map_err(usage)?;
    let examples = Manifest::read(&a.manifest)?.load_examples()?;
    let config = a.dims.config();
    let mut model = BridgeModel::<f32>::build(&config, a.scheme, a.optim.seed)?;
    create_dir(&a.out)?;
    config::write(&a.out.join("train.config"), "train", a)?;
    ModelSpec {
        preset: scheme_name(&a.scheme),
        scheme: a.scheme,
        config,
    }
    .write(&a.out.join(MODEL_JSON))?;
    if a.lm_warmup_steps > 0 {
        let cfg = LmPretrainConfig {
            steps: a.lm_warmup_steps,
            ..LmPretrainConfig::default()
        };
        pretrain_lm(&mut model, &cfg, a.optim.seed)?;
    }
    let records = train(&mut model, &examples, &cfg, &a.out)?;
    write_records(&a.out, &records)?;
    report_records(&records);
    Ok(())
}

pub fn nset_cmd(a: &NsetArgs) -> Result<()> {
    if !(0.0..1.0).contains(&a.ratio) {
        return Err(usage(format!("--ratio must be in [0, 1), got {}", a.ratio)));
    }
    let spec = ModelSpec::read(&spec_path(&a.model_json, &a.checkpoint))?;
    let mut model = load_model(&spec, &a.checkpoint)?;
    let speech = Manifest::read(&a.manifest)?.load_examples()?;
    let nonspeech = Manifest::read(&a.nonspeech)?.load_examples()?;
    let base = train_config(&a.optim, a.base_steps, 0, 1);
    let mut nset = NsetConfig::from_base(&base);
    nset.ratio = a.ratio;
    nset.lr_scale = a.lr_scale;
    if let Some(s) = a.steps {
        nset.steps = s;
        nset.checkpoint_every = (s / 5).max(1);
    }
    if let Some(e) = a.checkpoint_every {
        nset.checkpoint_every = e;
    }
    create_dir(&a.out)?;
    config::write(&a.out.join("nset-finetune.config"), "nset-finetune", a)?;
    spec.write(&a.out.join(MODEL_JSON))?;
    let records = nset_finetune(&mut model, &speech, &nonspeech, &base, &nset, &a.out)?;
    write_records(&a.out, &records)?;
    checkpoint::save(&model.store, &a.out.join("final.bin"))?;
    report_records(&records);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypRecord {
    pub utt_id: String,
    pub text: String,
    pub score: f64,
    pub length: usize,
}

pub fn decode_cmd(a: &DecodeArgs) -> Result<()> {
    let params = DecodeParams {
        beam_size: a.beam_size,
        max_length: a.max_length,
        nrns: a.no_repeat_ngram_size,
        length_penalty: a.length_penalty,
    };
    params.validate().map_err(usage)?;
    let spec = ModelSpec::read(&spec_path(&a.model_json, &a.checkpoint))?;
    let model = load_model(&spec, &a.checkpoint)?;
    let examples = Manifest::read(&a.manifest)?.load_examples()?;
    let decoded = decode_examples(&model, &examples, &params)?;
    let mut out = Vec::new();
    for d in &decoded {
        let rec = HypRecord {
            utt_id: d.id.clone(),
            text: d.text.clone(),
            score: d.best.score,
            length: d.best.tokens.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    config::write(&sidecar(&a.out, ".config"), "decode", a)?;
    println!("decoded {} utterances", decoded.len());
    Ok(())
}

/// `utt_id -> text` from a manifest or a hypotheses file.
fn transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let head: serde_json::Value = serde_json::from_str(first).with_context(|| format!("parsing {}", path.display()))?;
    if head.get("utt_id").is_some() {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let r: HypRecord =
                    serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1))?;
                Ok((r.utt_id, r.text))
            })
            .collect()
    } else {
        let m = Manifest::read(path)?;
        Ok(m.utterances.iter().map(|u| (u.id(), u.text.clone())).collect())
    }
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let refs = transcripts(&a.reference)?;
    let hyps: HashMap<String, String> = transcripts(&a.hyp)?.into_iter().collect();
    if hyps.len() != refs.len() {
        bail!("{} references but {} hypotheses", refs.len(), hyps.len());
    }
    let mut pairs = Vec::with_capacity(refs.len());
    for (id, r) in &refs {
        let h = hyps.get(id).with_context(|| format!("no hypothesis for utterance '{id}'"))?;
        pairs.push((words(r), words(h)));
    }
    let set = a.set.clone().unwrap_or_else(|| {
        a.reference
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".into())
    });
    let rep = corpus_report(&set, pairs);
    println!("{}", rep.line());
    if let Some(out) = &a.out {
        fs::write(out, format!("{}\n{}\n", rep.line(), rep.json_line()))
            .with_context(|| format!("writing {}", out.display()))?;
        config::write(&sidecar(out, ".config"), "eval", a)?;
    }
    Ok(())
}

pub fn average_cmd(a: &AverageArgs) -> Result<()> {
    let paths: Vec<PathBuf> = match &a.run {
        Some(run) => {
            let path = run.join(RECORDS_JSON);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let records: Vec<CheckpointRecord> = serde_json::from_str(&text)?;
            let window = select_best_window(&records, a.window)?;
            println!(
                "window: steps {}..{}",
                window.first().map_or(0, |r| r.step),
                window.last().map_or(0, |r| r.step)
            );
            window.into_iter().map(|r| r.path).collect()
        }
        None if a.checkpoints.is_empty() => return Err(usage("give --run or --checkpoints")),
        None => a.checkpoints.clone(),
    };
    let avg = average_checkpoints::<f32>(&paths)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    checkpoint::save_set(&avg, &a.out)?;
    config::write(&sidecar(&a.out, ".config"), "average", a)?;
    // Keep the model description beside the result so decode finds it.
    let here = a.out.parent().unwrap_or(Path::new(".")).join(MODEL_JSON);
    let source = paths[0].parent().unwrap_or(Path::new(".")).join(MODEL_JSON);
    if !here.exists() && source.exists() {
        fs::copy(&source, &here).with_context(|| format!("copying {}", source.display()))?;
    }
    println!("averaged {} checkpoints into {}", paths.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CountRow {
    scheme: String,
    encoder: u64,
    encoder_lora: u64,
    adapter: u64,
    llm: u64,
    llm_lora: u64,
    total: u64,
    reported_millions: Option<f64>,
}

pub fn count_cmd(a: &CountArgs) -> Result<()> {
    let cfg = a.dims.config();
    let schemes: Vec<(String, FinetuneScheme)> = match a.scheme {
        Some(s) => vec![(scheme_name(&s).to_uppercase(), s)],
        None => FinetuneScheme::presets().collect(),
    };
    let mut rows = Vec::new();
    for (name, s) in schemes {
        let c = count_params(&cfg, &s)?;
        let reported = match a.dims {
            Dims::Paper => name.strip_prefix('S').and_then(|n| n.parse().ok()).and_then(reported_total_millions),
            _ => None,
        };
        rows.push(CountRow {
            scheme: name,
            encoder: c.encoder,
            encoder_lora: c.encoder_lora,
            adapter: c.adapter,
            llm: c.llm,
            llm_lora: c.llm_lora,
            total: c.total(),
            reported_millions: reported,
        });
    }
    if a.json {
        for r in &rows {
            println!("{}", serde_json::to_string(r)?);
        }
        return Ok(());
    }
    println!(
        "{:<6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}",
        "scheme", "encoder", "enc_lora", "adapter", "llm", "llm_lora", "total", "reported", "diff"
    );
    for r in &rows {
        let (rep, diff) = match r.reported_millions {
            Some(m) => (format!("{m:.0}M"), format!("{:+.2}M", r.total as f64 / 1e6 - m)),
            None => ("-".into(), "-".into()),
        };
        println!(
            "{:<6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9}",
            r.scheme, r.encoder, r.encoder_lora, r.adapter, r.llm, r.llm_lora, r.total, rep, diff
        );
    }
    if a.dims == Dims::Paper {
        println!("\npublished component sizes are rounded and differ from the closed form:");
        for (name, computed, published) in published_components(&cfg) {
            println!(
                "  {name:<20} computed {computed:>12} ({:.2}M)  published {published}M  diff {:+.2}M",
                computed as f64 / 1e6,
                computed as f64 / 1e6 - published
            );
        }
    }
    Ok(())
}
