//! Audio I/O, the synthetic tone corpus, perturbation and non-speech mixing.

mod augment;
mod config;
mod manifest;
mod synth;
mod wav;


use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, speed_perturb, volume_perturb, AugmentPolicy};
pub use config::parse_kv;
pub use manifest::{mix_nset, split_validation, Example, Manifest, NonSpeech, Utterance};
pub use synth::{render_tokens, synth_corpus, synth_examples, token_frequencies, SynthConfig};
pub use wav::{decode_wav, dequantize, encode_wav, quantize, read_wav, write_wav, Waveform};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed wav: chunk '{chunk}' at byte {offset}: {msg}")]
    Wav { chunk: String, offset: usize, msg: String },
    #[error("{path}: {inner}")]
    InFile { path: PathBuf, inner: Box<DataError> },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("speed factor {factor} leaves no samples from an input of {len}")]
    FactorTooLarge { factor: f64, len: usize },
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("non-speech corpus has {available} utterances, {needed} needed")]
    NotEnoughNonSpeech { needed: usize, available: usize },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        Self::InFile {
            path: path.to_path_buf(),
            inner: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Independent stream for utterance `index`, so generation order never matters.
pub fn utterance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}
