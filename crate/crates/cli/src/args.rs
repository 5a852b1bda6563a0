use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use asr_bridge::model::{BridgeConfig, FinetuneScheme};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

#[derive(Debug, Parser)]
#[command(name = "asrbridge", version, about = "Speech-encoder to LM bridge: data, training, decoding, scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tone corpus and its manifest.
    Synth(SynthArgs),
    /// Train a bridge under a fine-tuning scheme.
    Train(TrainArgs),
    /// Continue training with non-speech, empty-transcript audio mixed in.
    NsetFinetune(NsetArgs),
    /// Beam-search every utterance of a manifest.
    Decode(DecodeArgs),
    /// Score hypotheses against references (WER with IER in parentheses).
    Eval(EvalArgs),
    /// Average checkpoints, or the best window of a training run.
    Average(AverageArgs),
    /// Trainable parameters per component for each scheme.
    CountParams(CountArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::NsetFinetune(_) => "nset-finetune",
            Command::Decode(_) => "decode",
            Command::Eval(_) => "eval",
            Command::Average(_) => "average",
            Command::CountParams(_) => "count-params",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dims {
    Tiny,
    Toy,
    Paper,
}

impl Dims {
    pub fn config(self) -> BridgeConfig {
        match self {
            Dims::Tiny => BridgeConfig::tiny(),
            Dims::Toy => BridgeConfig::toy(),
            Dims::Paper => BridgeConfig::paper_scale(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

/// `a,b` weights for the matching loss, or `off`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchLossArg(pub Option<(f64, f64)>);

impl FromStr for MatchLossArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("off") {
            return Ok(Self(None));
        }
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected 'a,b' or 'off', got '{s}'"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
        let (a, b) = (parse(a)?, parse(b)?);
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err("matching-loss weights must be finite and non-negative".into());
        }
        Ok(Self(Some((a, b))))
    }
}

impl fmt::Display for MatchLossArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("off"),
            Some((a, b)) => write!(f, "{a},{b}"),
        }
    }
}

fn display<S: Serializer, T: fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Preset name (`s1`..`s10`) of a scheme, which is also what `--scheme` parses.
pub fn scheme_name(s: &FinetuneScheme) -> String {
    FinetuneScheme::presets()
        .find(|(_, p)| p == s)
        .map(|(n, _)| n.to_lowercase())
        .unwrap_or_else(|| s.to_string())
}

fn scheme<S: Serializer>(v: &FinetuneScheme, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&scheme_name(v))
}

fn scheme_opt<S: Serializer>(v: &Option<FinetuneScheme>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&scheme_name(v)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Output directory; receives `<name>.jsonl` and `<name>/*.wav`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub name: String,
    #[arg(long, default_value_t = 8)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 200)]
    pub utts: usize,
    #[arg(long, default_value_t = 1)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 4)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 2000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 100)]
    pub samples_per_token: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub nonspeech_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    /// Seed of the word-to-frequency map, shared by every split of a task.
    #[arg(long, default_value_t = 0)]
    pub tone_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File of `key = value` lines supplying defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Optim {
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Matching-loss weights `a,b`, or `off`.
    #[arg(long, default_value = "off")]
    #[serde(serialize_with = "display")]
    pub match_loss: MatchLossArg,
    /// Speed/volume perturbation during training.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub augment: Switch,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory for checkpoints, logs and the model description.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Dims::Tiny)]
    pub dims: Dims,
    /// Fine-tuning scheme `s1` .. `s10`.
    #[arg(long, default_value = "s1")]
    #[serde(serialize_with = "scheme")]
    pub scheme: FinetuneScheme,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup_steps: usize,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    /// Steps of the LM warm start that precedes freezing.
    #[arg(long, default_value_t = 1000)]
    pub lm_warmup_steps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: Optim,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct NsetArgs {
    /// Trained (usually averaged) checkpoint to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model description; defaults to `model.json` beside the checkpoint.
    #[arg(long)]
    pub model_json: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest of non-speech audio with empty transcripts.
    #[arg(long)]
    pub nonspeech: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of the mixed corpus that is non-speech.
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
    /// Length of the original run; the default fine-tune is a tenth of it.
    #[arg(long, default_value_t = 2000)]
    pub base_steps: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub lr_scale: f64,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: Optim,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub model_json: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hypotheses file, one JSON record per utterance.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 256)]
    pub max_length: usize,
    /// Ban any token that would repeat an n-gram of this size (0 disables).
    #[arg(long, default_value_t = 0)]
    pub no_repeat_ngram_size: usize,
    /// Final score is sum log-prob / length^lp.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub length_penalty: f64,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// References: a manifest or a hypotheses file.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Hypotheses: a hypotheses file or a manifest.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Name shown in the report; defaults to the reference file stem.
    #[arg(long)]
    pub set: Option<String>,
    /// Also write the report line and a JSON record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AverageArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training run directory; its best window is averaged.
    #[arg(long, conflicts_with = "checkpoints")]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Explicit checkpoints, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct CountArgs {
    /// A single scheme; all ten when omitted.
    #[arg(long)]
    #[serde(serialize_with = "scheme_opt")]
    pub scheme: Option<FinetuneScheme>,
    #[arg(long, value_enum, default_value_t = Dims::Paper)]
    pub dims: Dims,
    /// Emit JSON records instead of a table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
