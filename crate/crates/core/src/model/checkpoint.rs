//! Binary parameter files.
//!
//! Layout (all integers little-endian): magic `ASRB`, version `u32`, count
//! `u32`, then per parameter: name length `u16`, UTF-8 name, dtype `u8`
//! (0 = f32, 1 = f64), rank `u8`, dims as `u32`, raw values.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::params::ParamStore;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ASRB";
pub const VERSION: u32 = 1;

/// Ordered `(name, value)` pairs, as stored in a checkpoint file.
pub type ParamSet<T> = Vec<(String, Tensor<T>)>;

/// Differences between two parameter sets that should have matched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamDiff {
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
    pub shape: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl ParamDiff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.shape.is_empty()
    }
}

impl fmt::Display for ParamDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.missing.is_empty() {
            parts.push(format!("missing [{}]", self.missing.join(", ")));
        }
        if !self.unexpected.is_empty() {
            parts.push(format!("unexpected [{}]", self.unexpected.join(", ")));
        }
        for (name, want, got) in &self.shape {
            parts.push(format!("{name}: expected shape {want:?}, found {got:?}"));
        }
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unsupported dtype tag {tag} for parameter {name:?}")]
    Dtype { name: String, tag: u8 },
    #[error("checkpoint truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("parameter name is not valid UTF-8 at byte {0}")]
    Name(usize),
    #[error("{0} trailing bytes after the last parameter")]
    Trailing(usize),
    #[error("parameter sets differ: {0}")]
    Mismatch(ParamDiff),
    #[error("nothing to average")]
    Empty,
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode<'a, T: Scalar>(params: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let params: Vec<_> = params.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::PRECISION.tag());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn encode_store<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    encode(store.iter().map(|(_, p)| (p.name(), p.value())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.pos,
                what,
            }),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Values stored at a different precision than `T` are converted.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32("parameter count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::Name(at))?
            .to_string();
        let tag = r.u8("dtype")?;
        let precision = Precision::from_tag(tag).ok_or_else(|| CheckpointError::Dtype {
            name: name.clone(),
            tag,
        })?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let width = precision.byte_width();
        let raw = r.take(n.saturating_mul(width), "values")?;
        let data: Vec<T> = match precision {
            p if p == T::PRECISION => raw.chunks_exact(width).map(T::read_le).collect(),
            Precision::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            Precision::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        let t = Tensor::new(shape, data).expect("buffer sized from shape");
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn snapshot<T: Scalar>(store: &ParamStore<T>) -> ParamSet<T> {
    store
        .iter()
        .map(|(_, p)| (p.name().to_string(), p.value().clone()))
        .collect()
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_store(store)).map_err(io_err(path))
}

pub fn save_set<T: Scalar>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    let bytes = encode(params.iter().map(|(n, t)| (n.as_str(), t)));
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamSet<T>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

/// Name and shape differences of `got` relative to `want`.
pub fn diff<T: Scalar>(want: &ParamSet<T>, got: &ParamSet<T>) -> ParamDiff {
    let mut d = ParamDiff::default();
    for (name, t) in want {
        match got.iter().find(|(n, _)| n == name) {
            None => d.missing.push(name.clone()),
            Some((_, g)) if g.shape() != t.shape() => {
                d.shape.push((name.clone(), t.shape().to_vec(), g.shape().to_vec()))
            }
            _ => {}
        }
    }
    for (name, _) in got {
        if !want.iter().any(|(n, _)| n == name) {
            d.unexpected.push(name.clone());
        }
    }
    d
}

/// Copies every value into `store`; names and shapes must match exactly.
pub fn apply<T: Scalar>(store: &mut ParamStore<T>, params: &ParamSet<T>) -> Result<()> {
    let d = diff(&snapshot(store), params);
    if !d.is_empty() {
        return Err(CheckpointError::Mismatch(d));
    }
    for (name, t) in params {
        let id = store.find(name).expect("checked by diff");
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}

/// Copies a subset of parameters; each name must exist with the same shape.
pub fn apply_partial<T: Scalar>(store: &mut ParamStore<T>, params: &ParamSet<T>) -> Result<()> {
    let mut d = ParamDiff::default();
    for (name, t) in params {
        match store.find(name) {
            None => d.unexpected.push(name.clone()),
            Some(id) if store.value(id).shape() != t.shape() => {
                d.shape.push((name.clone(), store.value(id).shape().to_vec(), t.shape().to_vec()))
            }
            Some(_) => {}
        }
    }
    if !d.is_empty() {
        return Err(CheckpointError::Mismatch(d));
    }
    for (name, t) in params {
        let id = store.find(name).expect("checked above");
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}

/// Elementwise mean, in the parameter order of the first set.
pub fn average<T: Scalar>(sets: &[ParamSet<T>]) -> Result<ParamSet<T>> {
    let first = sets.first().ok_or(CheckpointError::Empty)?;
    for s in &sets[1..] {
        let d = diff(first, s);
        if !d.is_empty() {
            return Err(CheckpointError::Mismatch(d));
        }
    }
    let k = sets.len() as f64;
    Ok(first
        .iter()
        .map(|(name, t0)| {
            // Accumulate in f64 so f32 sets average without drift.
            let mut acc = vec![0.0f64; t0.len()];
            for s in sets {
                let (_, t) = s.iter().find(|(n, _)| n == name).expect("checked by diff");
                for (a, &v) in acc.iter_mut().zip(t.data()) {
                    *a += v.as_f64();
                }
            }
            let data = acc.into_iter().map(|a| T::lit(a / k)).collect();
            (name.clone(), Tensor::new(t0.shape().to_vec(), data).expect("same shape"))
        })
        .collect())
}
