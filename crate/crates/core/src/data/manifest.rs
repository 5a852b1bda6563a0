use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_wav, DataError, Result, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub audio_path: String,
    pub text: String,
    pub duration_s: f64,
}

impl Utterance {
    pub fn is_nonspeech(&self) -> bool {
        self.text.trim().is_empty()
    }

    /// File stem of the audio path.
    pub fn id(&self) -> String {
        Path::new(&self.audio_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.audio_path.clone())
    }
}

/// JSONL, one utterance per line. Audio paths are relative to `base_dir`
/// unless absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub base_dir: PathBuf,
}

/// An utterance with its audio in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub wave: Waveform,
}

impl Example {
    pub fn is_nonspeech(&self) -> bool {
        self.text.trim().is_empty()
    }
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            utterances: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn resolve(&self, u: &Utterance) -> PathBuf {
        self.base_dir.join(&u.audio_path)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let utterances = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<Utterance>(l).map_err(|e| DataError::Manifest {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            utterances,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| DataError::io(path, e))
    }

    pub fn load_examples(&self) -> Result<Vec<Example>> {
        self.utterances
            .iter()
            .map(|u| {
                Ok(Example {
                    id: u.id(),
                    text: u.text.clone(),
                    wave: read_wav(&self.resolve(u))?,
                })
            })
            .collect()
    }
}

/// `(from_nonspeech, index)` pairs giving the mixed order.
fn mix_order(n_train: usize, available: usize, ratio: f64, seed: u64) -> Result<Vec<(bool, usize)>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(DataError::Invalid(format!("mix ratio must be in [0, 1), got {ratio}")));
    }
    // n / (n_train + n) = ratio.
    let needed = (ratio * n_train as f64 / (1.0 - ratio)).round() as usize;
    if needed > available {
        return Err(DataError::NotEnoughNonSpeech { needed, available });
    }
    let mut order: Vec<(bool, usize)> = (0..n_train).map(|i| (false, i)).collect();
    if needed == 0 {
        return Ok(order);
    }
    order.extend((0..needed).map(|i| (true, i)));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order)
}

/// Adds `round(ratio·total)` non-speech entries to `train` in a seeded shuffle.
///
/// Works on anything that can report whether it is non-speech; `ratio = 0`
/// returns `train` unchanged.
pub fn mix_nset<T: Clone + NonSpeech>(train: &[T], nonspeech: &[T], ratio: f64, seed: u64) -> Result<Vec<T>> {
    if let Some(i) = nonspeech.iter().position(|x| !x.nonspeech()) {
        return Err(DataError::Invalid(format!("non-speech entry {i} has a transcript")));
    }
    let order = mix_order(train.len(), nonspeech.len(), ratio, seed)?;
    Ok(order
        .into_iter()
        .map(|(ns, i)| if ns { nonspeech[i].clone() } else { train[i].clone() })
        .collect())
}

pub trait NonSpeech {
    fn nonspeech(&self) -> bool;
}

impl NonSpeech for Utterance {
    fn nonspeech(&self) -> bool {
        self.is_nonspeech()
    }
}

impl NonSpeech for Example {
    fn nonspeech(&self) -> bool {
        self.is_nonspeech()
    }
}

impl Manifest {
    /// Manifest form of [`mix_nset`]; non-speech paths are rebased onto this
    /// manifest's directory when the two differ.
    pub fn mix_nset(&self, nonspeech: &Manifest, ratio: f64, seed: u64) -> Result<Manifest> {
        let rebased: Vec<Utterance> = nonspeech
            .utterances
            .iter()
            .map(|u| {
                let mut u = u.clone();
                if nonspeech.base_dir != self.base_dir {
                    u.audio_path = nonspeech.resolve(&u).to_string_lossy().into_owned();
                }
                u
            })
            .collect();
        Ok(Manifest {
            utterances: mix_nset(&self.utterances, &rebased, ratio, seed)?,
            base_dir: self.base_dir.clone(),
        })
    }
}

/// Seeded split into `(train, validation)`; the validation part holds
/// `round(fraction·n)` items (at least one when `n ≥ 2`), both in original order.
pub fn split_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let mut n_val = (fraction * n as f64).round() as usize;
    if n >= 2 && fraction > 0.0 {
        n_val = n_val.clamp(1, n - 1);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (x, v) in items.iter().zip(is_val) {
        if v {
            val.push(x.clone());
        } else {
            train.push(x.clone());
        }
    }
    (train, val)
}
