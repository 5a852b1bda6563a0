use std::fs;
use std::path::Path;

use super::{DataError, Result};

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Clamps every sample into `[-1, 1]`.
    pub fn clip(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(-1.0, 1.0);
        }
        self
    }
}

/// `round(s·32768)` (halves away from zero), clamped to the `i16` range.
pub fn quantize(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize(q: i16) -> f32 {
    q as f32 / 32768.0
}

/// RIFF/WAVE, PCM 16-bit mono.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn malformed(chunk: &str, offset: usize, msg: impl Into<String>) -> DataError {
    DataError::Wav {
        chunk: chunk.to_string(),
        offset,
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("RIFF", 0, "missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed(&id, pos, format!("chunk declares {size} bytes past end of file")))?;
        match id.as_str() {
            "fmt " => {
                if size < 16 {
                    return Err(malformed(&id, pos, "fmt chunk shorter than 16 bytes"));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            "data" => {
                let (fmt, channels, rate, bits) =
                    format.ok_or_else(|| malformed(&id, pos, "data chunk before fmt chunk"))?;
                if fmt != 1 || channels != 1 || bits != 16 {
                    return Err(malformed(
                        "fmt ",
                        12,
                        format!("unsupported encoding: format {fmt}, {channels} channels, {bits} bits"),
                    ));
                }
                if size % 2 != 0 {
                    return Err(malformed(&id, pos, "odd data length for 16-bit samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| dequantize(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(Waveform::new(samples, rate));
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(malformed("data", pos, "no data chunk"))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_wav(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    fs::write(path, encode_wav(w)).map_err(|e| DataError::io(path, e))
}
