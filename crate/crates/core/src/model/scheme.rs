use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::layers::AdapterKind;

/// How one module of the bridge is updated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinetuneMode {
    Frozen,
    LoRa,
    Full,
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinetuneMode::Frozen => "Frozen",
            FinetuneMode::LoRa => "LoRa",
            FinetuneMode::Full => "Full",
        })
    }
}

/// Encoder mode, adapter architecture and LM mode. The adapter always trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FinetuneScheme {
    pub encoder: FinetuneMode,
    pub adapter: AdapterKind,
    pub llm: FinetuneMode,
}

impl FinetuneScheme {
    pub const fn new(encoder: FinetuneMode, adapter: AdapterKind, llm: FinetuneMode) -> Self {
        Self {
            encoder,
            adapter,
            llm,
        }
    }

    /// Named presets `S1`..`S10`.
    pub fn preset(n: usize) -> Option<Self> {
        use AdapterKind::*;
        use FinetuneMode::*;
        let s = match n {
            1 => Self::new(Frozen, Conv1dMLP, Frozen),
            2 => Self::new(Frozen, Conv1dMLP, LoRa),
            3 => Self::new(LoRa, Conv1dMLP, Frozen),
            4 => Self::new(LoRa, Conv1dMLP, LoRa),
            5 => Self::new(Full, Conv1dMLP, Frozen),
            6 => Self::new(Full, Conv1dMLP, LoRa),
            7 => Self::new(Frozen, DwsMLP, Frozen),
            8 => Self::new(Frozen, Conv1dTransformer, Frozen),
            9 => Self::new(LoRa, DwsMLP, LoRa),
            10 => Self::new(LoRa, Conv1dTransformer, LoRa),
            _ => return None,
        };
        Some(s)
    }

    pub fn presets() -> impl Iterator<Item = (String, Self)> {
        (1..=10).map(|n| (format!("S{n}"), Self::preset(n).expect("preset exists")))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.llm == FinetuneMode::Full {
            return Err(ModelError::UnsupportedScheme(
                "the language model can only be frozen or LoRA-adapted".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for FinetuneScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.encoder, self.adapter, self.llm)
    }
}

impl FromStr for FinetuneScheme {
    type Err = ModelError;

    /// Accepts `s1`..`s10` (any case).
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let n = s
            .strip_prefix(['s', 'S'])
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| ModelError::UnsupportedScheme(format!("unknown scheme {s:?}")))?;
        Self::preset(n).ok_or_else(|| ModelError::UnsupportedScheme(format!("unknown scheme {s:?}")))
    }
}
