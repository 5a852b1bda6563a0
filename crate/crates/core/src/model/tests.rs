use super::*;
use crate::layers::{AdapterKind, AttnRole, LoraSpec};
use crate::model::checkpoint;
use crate::tensor::{Graph, Tensor};

fn micro() -> BridgeConfig {
    BridgeConfig {
        encoder: EncoderConfig {
            front_end: vec![ConvStage {
                channels: 4,
                kernel: 2,
                stride: 2,
            }],
            d_enc: 4,
            layers: 1,
            heads: 1,
            ffn_hidden: 4,
        },
        lm: LmConfig {
            d_llm: 4,
            layers: 1,
            heads: 2,
            ffn_hidden: 8,
        },
        subsample: 2,
        adapter_layers: 1,
        adapter_ffn_multiplier: 2.5,
        adapter_heads: 2,
        adapter_positional: false,
        vocab: Vocab::new(2),
        encoder_lora: LoraSpec::new(2, 4.0, &[AttnRole::Query, AttnRole::Value]),
        lm_lora: LoraSpec::new(2, 2.0, &[AttnRole::Query, AttnRole::Key, AttnRole::Value]),
    }
}

fn preset(n: usize) -> FinetuneScheme {
    FinetuneScheme::preset(n).unwrap()
}

fn wave(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (0.37 * i as f64 + phase).sin() * 0.5).collect()
}

fn sorted(mut v: Vec<crate::ParamId>) -> Vec<crate::ParamId> {
    v.sort();
    v
}

#[test]
fn presets_match_the_scheme_table() {
    use AdapterKind::*;
    use FinetuneMode::*;
    let expected = [
        (Frozen, Conv1dMLP, Frozen),
        (Frozen, Conv1dMLP, LoRa),
        (LoRa, Conv1dMLP, Frozen),
        (LoRa, Conv1dMLP, LoRa),
        (Full, Conv1dMLP, Frozen),
        (Full, Conv1dMLP, LoRa),
        (Frozen, DwsMLP, Frozen),
        (Frozen, Conv1dTransformer, Frozen),
        (LoRa, DwsMLP, LoRa),
        (LoRa, Conv1dTransformer, LoRa),
    ];
    for (i, (e, a, l)) in expected.into_iter().enumerate() {
        assert_eq!(preset(i + 1), FinetuneScheme::new(e, a, l));
        assert_eq!(format!("s{}", i + 1).parse::<FinetuneScheme>().unwrap(), preset(i + 1));
    }
    assert!("s11".parse::<FinetuneScheme>().is_err());
    assert!("x1".parse::<FinetuneScheme>().is_err());
}

#[test]
fn full_llm_is_rejected() {
    let s = FinetuneScheme::new(FinetuneMode::Frozen, AdapterKind::Conv1dMLP, FinetuneMode::Full);
    assert!(matches!(
        BridgeModel::<f32>::build(&micro(), s, 0),
        Err(ModelError::UnsupportedScheme(_))
    ));
    assert!(count_params(&micro(), &s).is_err());
}

#[test]
fn trainable_sets_follow_the_scheme() {
    let cfg = micro();
    let s1 = BridgeModel::<f32>::build(&cfg, preset(1), 3).unwrap();
    assert_eq!(trainable_parameters(&s1).unwrap(), sorted(s1.adapter_ids()));

    let s4 = BridgeModel::<f32>::build(&cfg, preset(4), 3).unwrap();
    let mut want = s4.adapter_ids();
    want.extend(s4.encoder.lora_ids());
    want.extend(s4.lm.lora_ids());
    assert!(!s4.encoder.lora_ids().is_empty() && !s4.lm.lora_ids().is_empty());
    assert_eq!(trainable_parameters(&s4).unwrap(), sorted(want));

    let s6 = BridgeModel::<f32>::build(&cfg, preset(6), 3).unwrap();
    let mut want = s6.encoder.base_ids();
    want.extend(s6.adapter_ids());
    want.extend(s6.lm.lora_ids());
    assert!(s6.encoder.lora_ids().is_empty());
    assert_eq!(trainable_parameters(&s6).unwrap(), sorted(want));
}

#[test]
fn lora_roles_per_module() {
    let m = BridgeModel::<f32>::build(&micro(), preset(4), 0).unwrap();
    let names: Vec<String> = m
        .encoder
        .lora_ids()
        .iter()
        .chain(&m.lm.lora_ids())
        .map(|&id| m.store.get(id).name().to_string())
        .collect();
    for want in [
        "encoder.layers.0.attn.q.lora_a",
        "encoder.layers.0.attn.v.lora_b",
        "lm.layers.0.attn.k.lora_a",
    ] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    assert!(!names.iter().any(|n| n.starts_with("encoder") && n.contains(".k.")));
}

#[test]
fn frozen_adapter_is_rejected() {
    let mut m = BridgeModel::<f32>::build(&micro(), preset(1), 0).unwrap();
    for id in m.adapter_ids() {
        m.store.set_trainable(id, false);
    }
    assert!(trainable_parameters(&m).is_err());
}

#[test]
fn same_seed_same_parameters() {
    let a = BridgeModel::<f32>::build(&micro(), preset(10), 9).unwrap();
    let b = BridgeModel::<f32>::build(&micro(), preset(10), 9).unwrap();
    let c = BridgeModel::<f32>::build(&micro(), preset(10), 10).unwrap();
    assert_eq!(checkpoint::encode_store(&a.store), checkpoint::encode_store(&b.store));
    assert_ne!(checkpoint::encode_store(&a.store), checkpoint::encode_store(&c.store));
}

#[test]
fn base_weights_do_not_depend_on_the_scheme() {
    let s1 = BridgeModel::<f64>::build(&micro(), preset(1), 5).unwrap();
    let s10 = BridgeModel::<f64>::build(&micro(), preset(10), 5).unwrap();
    for (_, p) in s1.store.iter() {
        if p.name().starts_with("adapter") {
            continue;
        }
        let other = s10.store.find(p.name()).unwrap();
        assert_eq!(p.value(), s10.store.value(other), "{}", p.name());
    }
}

#[test]
fn logits_shape_contract() {
    let cfg = micro();
    let m = BridgeModel::<f64>::build(&cfg, preset(1), 1).unwrap();
    for targets in [vec![], vec![0], vec![1, 0, 1]] {
        let g = Graph::new();
        let out = m.forward_asr(&g, &wave(24, 0.0), &targets).unwrap();
        assert_eq!(out.logits.shape(), vec![targets.len() + 1, cfg.vocab.size()]);
        assert_eq!(out.x1.shape(), vec![cfg.prefix_len(24).unwrap(), cfg.lm.d_llm]);
    }
}

#[test]
fn too_short_and_unknown_token_errors() {
    let cfg = micro();
    let m = BridgeModel::<f64>::build(&cfg, preset(1), 1).unwrap();
    let g = Graph::new();
    let min = cfg.min_samples();
    assert_eq!(min, 4);
    assert!(m.forward_asr(&g, &wave(min, 0.0), &[0]).is_ok());
    assert!(matches!(
        m.forward_asr(&g, &wave(min - 1, 0.0), &[0]),
        Err(ModelError::WaveformTooShort { len: 3, min: 4 })
    ));
    assert!(matches!(
        m.forward_asr(&g, &wave(16, 0.0), &[cfg.vocab.eos()]),
        Err(ModelError::UnknownToken(_))
    ));
}

#[test]
fn min_samples_is_tight() {
    for cfg in [BridgeConfig::toy(), BridgeConfig::tiny(), micro()] {
        let min = cfg.min_samples();
        assert_eq!(cfg.prefix_len(min), Some(1));
        assert_eq!(cfg.prefix_len(min - 1), None);
    }
}

#[test]
fn lora_presence_does_not_change_initial_outputs() {
    let cfg = micro();
    let plain = BridgeModel::<f32>::build(&cfg, preset(1), 4).unwrap();
    let lora = BridgeModel::<f32>::build(&cfg, preset(4), 4).unwrap();
    let w: Vec<f32> = wave(30, 0.2).iter().map(|&v| v as f32).collect();
    let (g1, g2) = (Graph::new(), Graph::new());
    let a = plain.forward_asr(&g1, &w, &[1, 0]).unwrap();
    let b = lora.forward_asr(&g2, &w, &[1, 0]).unwrap();
    assert_eq!(a.logits.value().data(), b.logits.value().data());
}

#[test]
fn forward_is_deterministic() {
    let m = BridgeModel::<f32>::build(&micro(), preset(8), 2).unwrap();
    let w: Vec<f32> = wave(40, 1.0).iter().map(|&v| v as f32).collect();
    let (g1, g2) = (Graph::new(), Graph::new());
    let a = m.forward_asr(&g1, &w, &[0, 1]).unwrap().logits.value();
    let b = m.forward_asr(&g2, &w, &[0, 1]).unwrap().logits.value();
    assert_eq!(a.data(), b.data());
}

#[test]
fn target_embeddings_use_the_input_table() {
    let m = BridgeModel::<f64>::build(&micro(), preset(2), 0).unwrap();
    assert_eq!(m.embedding_table(), m.lm.embed);
    let g = Graph::new();
    let e = m.target_embeddings(&g, &[1, 0], true).unwrap();
    let table = m.store.value(m.lm.embed);
    assert_eq!(e.value().row(0), table.row(1));
    assert_eq!(e.value().row(1), table.row(0));
}

#[test]
fn cross_entropy_examples() {
    let g = Graph::<f64>::new();
    let uniform = g.leaf(Tensor::zeros(&[1, 4]));
    let v = cross_entropy(uniform, &[2]).unwrap().value().data()[0];
    assert!((v - 4f64.ln()).abs() < 1e-12);

    let sharp = g.leaf(Tensor::from_rows(&[vec![100.0, 0.0, 0.0]]));
    assert!(cross_entropy(sharp, &[0]).unwrap().value().data()[0] < 1e-30);

    // Per-position oracle: -log(exp(x_t) / Σ exp(x_j)) averaged.
    let rows: [Vec<f64>; 3] = [vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.5], vec![-2.0, 3.0, 1.0]];
    let targets = [2, 0, 1];
    let oracle: f64 = rows
        .iter()
        .zip(targets)
        .map(|(r, t)| -(r[t].exp() / r.iter().map(|x: &f64| x.exp()).sum::<f64>()).ln())
        .sum::<f64>()
        / 3.0;
    let logits = g.leaf(Tensor::from_rows(&rows));
    let v = cross_entropy(logits, &targets).unwrap().value().data()[0];
    assert!((v - oracle).abs() < 1e-12);

    assert!(cross_entropy(logits, &[0, 1]).is_err());
}

#[test]
fn audio_prefix_is_not_supervised() {
    let cfg = micro();
    let m = BridgeModel::<f64>::build(&cfg, preset(1), 6).unwrap();
    let g = Graph::new();
    let out = m.forward_asr(&g, &wave(20, 0.0), &[1]).unwrap();
    // Only the BOS and target positions produce logits.
    assert_eq!(out.logits.value().rows(), 2);
    let loss = cross_entropy(out.logits, &m.targets_with_eos(&[1])).unwrap();
    assert!(loss.value().data()[0].is_finite());
}

#[test]
fn trainable_count_equals_closed_form() {
    for cfg in [micro(), BridgeConfig::tiny(), BridgeConfig::toy()] {
        for (name, s) in FinetuneScheme::presets() {
            let m = BridgeModel::<f32>::build(&cfg, s, 0).unwrap();
            let ids = trainable_parameters(&m).unwrap();
            let counted = count_params(&cfg, &s).unwrap();
            assert_eq!(m.store.num_elements(&ids) as u64, counted.total(), "{name}");
            assert_eq!(m.store.num_elements(&m.adapter_ids()) as u64, counted.adapter, "{name}");
        }
    }
}

#[test]
fn paper_scale_counts() {
    let cfg = BridgeConfig::paper_scale();
    let c1 = count_params(&cfg, &preset(1)).unwrap();
    // conv 1024·8·4096 + 4096, projection 4096² + 4096.
    assert_eq!(c1.adapter, 1024 * 8 * 4096 + 4096 + 4096 * 4096 + 4096);
    assert_eq!(c1.adapter, 50_339_840);
    assert_eq!(c1.total(), c1.adapter);
    let c7 = count_params(&cfg, &preset(7)).unwrap();
    assert_eq!(c7.adapter, 20_988_928);
    let c4 = count_params(&cfg, &preset(4)).unwrap();
    assert_eq!(c4.encoder_lora, 24 * 2 * 8 * (1024 + 1024));
    assert_eq!(c4.encoder_lora, 786_432);
    assert_eq!(c4.llm_lora, 32 * 3 * 16 * (4096 + 4096));
    assert_eq!(c4.llm_lora, 12_582_912);
    assert_eq!(reported_total_millions(4), Some(65.0));
    assert_eq!(reported_total_millions(11), None);
}

#[test]
fn vocab_round_trip() {
    let v = Vocab::new(32);
    assert_eq!(v.size(), 34);
    assert_eq!((v.bos(), v.eos()), (32, 33));
    let ids = v.encode("w3 w0 w31").unwrap();
    assert_eq!(ids, vec![3, 0, 31]);
    assert_eq!(v.decode(&ids), "w3 w0 w31");
    assert_eq!(v.encode("").unwrap(), Vec::<u32>::new());
    assert!(v.encode("w32").is_err());
    assert!(v.encode("hello").is_err());
    assert_eq!(v.decode(&[1, 33, 2]), "w1");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let m = BridgeModel::<f32>::build(&micro(), preset(10), 11).unwrap();
    checkpoint::save(&m.store, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"ASRB");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, m.store.len());

    let loaded = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(loaded, checkpoint::snapshot(&m.store));
    let mut fresh = BridgeModel::<f32>::build(&micro(), preset(10), 12).unwrap();
    checkpoint::apply(&mut fresh.store, &loaded).unwrap();
    assert_eq!(checkpoint::encode_store(&fresh.store), bytes);
}

#[test]
fn checkpoint_errors_are_structured() {
    let m = BridgeModel::<f32>::build(&micro(), preset(1), 0).unwrap();
    let bytes = checkpoint::encode_store(&m.store);
    assert!(matches!(
        checkpoint::decode::<f32>(&bytes[..bytes.len() - 3]),
        Err(CheckpointError::Truncated { what: "values", .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode::<f32>(&bad), Err(CheckpointError::BadMagic(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(checkpoint::decode::<f32>(&bad), Err(CheckpointError::Version(9))));

    let other = BridgeModel::<f32>::build(&micro(), preset(7), 0).unwrap();
    let mut store = m.store.clone();
    match checkpoint::apply(&mut store, &checkpoint::snapshot(&other.store)) {
        Err(CheckpointError::Mismatch(d)) => {
            assert!(d.missing.iter().any(|n| n == "adapter.conv.weight"));
            assert!(d.unexpected.iter().any(|n| n == "adapter.conv.depthwise"));
        }
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn checkpoint_converts_precision() {
    let m = BridgeModel::<f64>::build(&micro(), preset(1), 0).unwrap();
    let bytes = checkpoint::encode_store(&m.store);
    let as32 = checkpoint::decode::<f32>(&bytes).unwrap();
    let (name, t) = &as32[0];
    let id = m.store.find(name).unwrap();
    assert_eq!(t.data()[0], m.store.value(id).data()[0] as f32);
}

#[test]
fn incremental_lm_matches_full_forward() {
    let cfg = micro();
    let mut m = BridgeModel::<f64>::build(&cfg, preset(4), 21).unwrap();
    // Give the LoRA pairs non-zero B so merging is exercised.
    for id in m.lm.lora_ids().into_iter().chain(m.encoder.lora_ids()) {
        for (k, v) in m.store.value_mut(id).data_mut().iter_mut().enumerate() {
            *v += 0.05 * ((k % 7) as f64 - 3.0);
        }
    }
    let w = wave(28, 0.3);
    let targets = [1, 0, 0, 1];
    let g = Graph::new();
    let out = m.forward_asr(&g, &w, &targets).unwrap();
    let logits = out.logits.value();

    let lm = InferenceLm::from_model(&m).unwrap();
    let x1 = out.x1.value();
    let mut scorer = BridgeScorer::new(&lm, &x1, cfg.vocab.bos(), cfg.vocab.eos()).unwrap();
    use crate::decode::Scorer;
    for i in 0..=targets.len() {
        let lp = scorer.log_probs(&targets[..i]).unwrap();
        let row = crate::tensor::log_softmax_slice(logits.row(i));
        for (a, b) in lp.iter().zip(&row) {
            assert!((a - b).abs() < 1e-10, "position {i}: {a} vs {b}");
        }
    }
}

// Scalar re-implementation of the whole bridge, written against the
// parameter names only, to check the assembled forward pass.
mod oracle {
    use crate::model::BridgeModel;

    pub struct P<'a>(pub &'a BridgeModel<f64>);

    impl P<'_> {
        pub fn get(&self, name: &str) -> Vec<f64> {
            let id = self.0.store.find(name).unwrap_or_else(|| panic!("{name}"));
            self.0.store.value(id).data().to_vec()
        }

        fn lora_delta(&self, prefix: &str, x: &[f64], d_out: usize, alpha: f64) -> Vec<f64> {
            let Some(a_id) = self.0.store.find(&format!("{prefix}.lora_a")) else {
                return vec![0.0; d_out];
            };
            let a = self.0.store.value(a_id);
            let r = a.rows();
            let b = self.get(&format!("{prefix}.lora_b"));
            let ax: Vec<f64> = (0..r)
                .map(|i| (0..x.len()).map(|j| a.data()[i * x.len() + j] * x[j]).sum())
                .collect();
            (0..d_out)
                .map(|o| (0..r).map(|i| b[o * r + i] * ax[i]).sum::<f64>() * alpha / r as f64)
                .collect()
        }

        /// `W·x + b` (+ LoRA) for a single row.
        pub fn linear(&self, prefix: &str, x: &[f64], alpha: f64) -> Vec<f64> {
            let w = self.get(&format!("{prefix}.weight"));
            let bias = self.get(&format!("{prefix}.bias"));
            let d_out = bias.len();
            let delta = self.lora_delta(prefix, x, d_out, alpha);
            (0..d_out)
                .map(|o| (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>() + bias[o] + delta[o])
                .collect()
        }

        pub fn norm(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
            let g = self.get(&format!("{prefix}.gamma"));
            let b = self.get(&format!("{prefix}.beta"));
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            x.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
                .collect()
        }
    }

    pub fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    pub fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
        (0..d)
            .map(|i| {
                let f = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
                if i % 2 == 0 {
                    (pos as f64 * f).sin()
                } else {
                    (pos as f64 * f).cos()
                }
            })
            .collect()
    }

    pub fn conv(p: &P, prefix: &str, x: &[Vec<f64>], k: usize, s: usize) -> Vec<Vec<f64>> {
        let w = p.get(&format!("{prefix}.weight"));
        let b = p.get(&format!("{prefix}.bias"));
        let c_in = x[0].len();
        let out_len = (x.len() - k) / s + 1;
        (0..out_len)
            .map(|t| {
                (0..b.len())
                    .map(|o| {
                        let mut acc = b[o];
                        for j in 0..k {
                            for c in 0..c_in {
                                acc += w[o * k * c_in + j * c_in + c] * x[t * s + j][c];
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Pre-norm block; `visible(i, j)` is the attention mask.
    pub fn block(
        p: &P,
        prefix: &str,
        x: &[Vec<f64>],
        heads: usize,
        alpha: f64,
        visible: impl Fn(usize, usize) -> bool,
    ) -> Vec<Vec<f64>> {
        let n = x.len();
        let d = x[0].len();
        let dh = d / heads;
        let h: Vec<_> = x.iter().map(|r| p.norm(&format!("{prefix}.ln1"), r)).collect();
        let proj = |role: &str| -> Vec<Vec<f64>> {
            h.iter()
                .map(|r| p.linear(&format!("{prefix}.attn.{role}"), r, alpha))
                .collect()
        };
        let (q, k, v) = (proj("q"), proj("k"), proj("v"));
        let mut out = Vec::new();
        for i in 0..n {
            let mut merged = vec![0.0; d];
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        if visible(i, j) {
                            cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for j in 0..n {
                    let a = (scores[j] - m).exp() / z;
                    for c in cols.clone() {
                        merged[c] += a * v[j][c];
                    }
                }
            }
            let attn = p.linear(&format!("{prefix}.attn.o"), &merged, alpha);
            let x1: Vec<f64> = x[i].iter().zip(&attn).map(|(a, b)| a + b).collect();
            let h2 = p.norm(&format!("{prefix}.ln2"), &x1);
            let f1: Vec<f64> = p
                .linear(&format!("{prefix}.ff1"), &h2, alpha)
                .into_iter()
                .map(gelu)
                .collect();
            let f2 = p.linear(&format!("{prefix}.ff2"), &f1, alpha);
            out.push(x1.iter().zip(&f2).map(|(a, b)| a + b).collect());
        }
        out
    }
}

#[test]
fn bridge_forward_matches_scalar_oracle() {
    use oracle::*;
    let cfg = micro();
    let mut m = BridgeModel::<f64>::build(&cfg, preset(4), 17).unwrap();
    for id in m.lm.lora_ids().into_iter().chain(m.encoder.lora_ids()) {
        for (k, v) in m.store.value_mut(id).data_mut().iter_mut().enumerate() {
            *v += 0.1 * ((k % 5) as f64 - 2.0);
        }
    }
    let w = wave(22, 0.7);
    let targets = [1u32, 1, 0];
    let g = Graph::new();
    let got = m.forward_asr(&g, &w, &targets).unwrap().logits.value();

    let p = P(&m);
    // Encoder: conv + GeLU, positions, one full-attention block, final norm.
    let samples: Vec<Vec<f64>> = w.iter().map(|&s| vec![s]).collect();
    let mut x: Vec<Vec<f64>> = conv(&p, "encoder.conv.0", &samples, 2, 2)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    for (t, r) in x.iter_mut().enumerate() {
        for (v, s) in r.iter_mut().zip(sinusoid(t, 4)) {
            *v += s;
        }
    }
    x = block(&p, "encoder.layers.0", &x, 1, 4.0, |_, _| true);
    x = x.iter().map(|r| p.norm("encoder.ln_f", r)).collect();
    // Adapter (Conv1dMLP): conv k=s=2, GeLU, projection.
    let x1: Vec<Vec<f64>> = conv(&p, "adapter.conv", &x, 2, 2)
        .into_iter()
        .map(|r| {
            let r: Vec<f64> = r.into_iter().map(gelu).collect();
            p.linear("adapter.proj", &r, 1.0)
        })
        .collect();
    // LM over [X1] ++ [BOS] ++ Y with the prefix mask.
    let table = p.get("lm.embed");
    let t_a = x1.len();
    let mut seq = x1.clone();
    for &t in std::iter::once(&cfg.vocab.bos()).chain(&targets) {
        seq.push(table[t as usize * 4..(t as usize + 1) * 4].to_vec());
    }
    for (t, r) in seq.iter_mut().enumerate() {
        for (v, s) in r.iter_mut().zip(sinusoid(t, 4)) {
            *v += s;
        }
    }
    let seq = block(&p, "lm.layers.0", &seq, 2, 2.0, |i, j| j < t_a || j <= i);
    for (row, h) in seq[t_a..].iter().enumerate() {
        let h = p.norm("lm.ln_f", h);
        for tok in 0..cfg.vocab.size() {
            let e = &table[tok * 4..(tok + 1) * 4];
            let want = h.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / 2.0;
            let have = got.at(row, tok);
            assert!((want - have).abs() < 1e-10, "row {row} token {tok}: {want} vs {have}");
        }
    }
}
