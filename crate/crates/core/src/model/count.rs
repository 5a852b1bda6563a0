use serde::Serialize;

use super::{BridgeConfig, FinetuneMode, FinetuneScheme, Result};
use crate::layers::AdapterKind;

/// Trainable parameters per component; frozen components count zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub encoder: u64,
    pub encoder_lora: u64,
    pub adapter: u64,
    pub llm: u64,
    pub llm_lora: u64,
}

impl ParamCounts {
    pub fn total(&self) -> u64 {
        self.encoder + self.encoder_lora + self.adapter + self.llm + self.llm_lora
    }

    pub fn entries(&self) -> [(&'static str, u64); 6] {
        [
            ("encoder", self.encoder),
            ("encoder_lora", self.encoder_lora),
            ("adapter", self.adapter),
            ("llm", self.llm),
            ("llm_lora", self.llm_lora),
            ("total", self.total()),
        ]
    }
}

/// Closed-form counts from the configuration alone (nothing is allocated,
/// so this works for full-size dimensions).
pub fn count_params(cfg: &BridgeConfig, scheme: &FinetuneScheme) -> Result<ParamCounts> {
    scheme.validate()?;
    Ok(ParamCounts {
        encoder: match scheme.encoder {
            FinetuneMode::Full => cfg.encoder.param_count(),
            _ => 0,
        },
        encoder_lora: match scheme.encoder {
            FinetuneMode::LoRa => cfg.encoder.lora_param_count(&cfg.encoder_lora),
            _ => 0,
        },
        adapter: cfg.adapter_config(scheme.adapter).param_count(),
        llm: match scheme.llm {
            FinetuneMode::Full => cfg.lm.param_count(cfg.vocab.size()),
            _ => 0,
        },
        llm_lora: match scheme.llm {
            FinetuneMode::LoRa => cfg.lm.lora_param_count(&cfg.lm_lora),
            _ => 0,
        },
    })
}

/// Rounded totals (millions) published for presets `S1`..`S10`.
pub fn reported_total_millions(preset: usize) -> Option<f64> {
    const REPORTED: [f64; 10] = [48.0, 64.0, 49.0, 65.0, 345.0, 361.0, 20.0, 320.0, 37.0, 337.0];
    preset.checked_sub(1).and_then(|i| REPORTED.get(i).copied())
}

/// Published per-component sizes (millions) next to the closed-form counts for
/// `cfg`. The published figures are rounded and do not follow from the stated
/// dimensions; they are shown, never used.
pub fn published_components(cfg: &BridgeConfig) -> [(&'static str, u64, f64); 3] {
    [
        ("conv1d-mlp adapter", cfg.adapter_config(AdapterKind::Conv1dMLP).param_count(), 48.0),
        ("encoder LoRA", cfg.encoder.lora_param_count(&cfg.encoder_lora), 0.65),
        ("LM LoRA", cfg.lm.lora_param_count(&cfg.lm_lora), 16.0),
    ]
}
