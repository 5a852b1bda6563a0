use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{gradcheck, Graph};

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    t64(shape, &(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
}

fn builder_parts() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), ChaCha8Rng::seed_from_u64(1))
}

fn run<F>(store: &ParamStore<f64>, x: Tensor<f64>, f: F) -> Tensor<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> crate::tensor::Result<Var<'g, f64>>,
{
    let _ = store;
    let g = Graph::new();
    let v = g.input(x);
    (*f(&g, v).unwrap().value()).clone()
}

use crate::tensor::Var;

#[test]
fn conv1d_identity_kernel() {
    let (mut store, mut rng) = builder_parts();
    let conv = Conv1d::build(&mut ParamBuilder::new(&mut store, &mut rng), Conv1dSpec::new(1, 1, 1, 1)).unwrap();
    *store.value_mut(conv.weight) = t64(&[1, 1], &[1.0]);
    let x = t64(&[4, 1], &[0.5, -1.0, 2.0, 3.0]);
    let y = run(&store, x.clone(), |g, v| conv.forward(g, &store, v));
    assert_eq!(y, x);
}

#[test]
fn conv1d_shape_law_and_short_input() {
    let spec = Conv1dSpec::new(3, 5, 8, 8);
    assert_eq!(spec.output_len(16), Some(2));
    assert_eq!(spec.output_len(7), None);
    let (mut store, mut rng) = builder_parts();
    let conv = Conv1d::build(&mut ParamBuilder::new(&mut store, &mut rng), spec).unwrap();
    let y = run(&store, Tensor::zeros(&[16, 3]), |g, v| conv.forward(g, &store, v));
    assert_eq!(y.shape(), &[2, 5]);
    let g = Graph::new();
    let err = conv.forward(&g, &store, g.input(Tensor::zeros(&[7, 3]))).unwrap_err();
    assert!(matches!(err, TensorError::InputTooShort { len: 7, kernel: 8 }));
}

#[test]
fn conv1d_difference_filter() {
    let (mut store, mut rng) = builder_parts();
    let mut spec = Conv1dSpec::new(1, 1, 2, 1);
    spec.bias = false;
    let conv = Conv1d::build(&mut ParamBuilder::new(&mut store, &mut rng), spec).unwrap();
    *store.value_mut(conv.weight) = t64(&[1, 2], &[1.0, -1.0]);
    let y = run(&store, t64(&[3, 1], &[3., 5., 4.]), |g, v| conv.forward(g, &store, v));
    assert_eq!(y.data(), &[-2.0, 1.0]);
}

#[test]
fn dws_identity_and_decomposition() {
    let (mut store, mut rng) = builder_parts();
    let dws = DwsConv1d::build(&mut ParamBuilder::new(&mut store, &mut rng), Conv1dSpec::new(2, 2, 1, 1)).unwrap();
    *store.value_mut(dws.depthwise) = t64(&[2, 1], &[1., 1.]);
    *store.value_mut(dws.pointwise.weight) = Tensor::eye(2);
    let x = t64(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
    assert_eq!(run(&store, x.clone(), |g, v| dws.forward(g, &store, v)), x);

    // Random weights: full forward equals depthwise stage then pointwise stage.
    let (mut store, mut rng) = builder_parts();
    let dws = DwsConv1d::build(&mut ParamBuilder::new(&mut store, &mut rng), Conv1dSpec::new(3, 4, 3, 2)).unwrap();
    let x = random(&mut rng, &[9, 3]);
    let full = run(&store, x.clone(), |g, v| dws.forward(g, &store, v));
    let stage1 = run(&store, x, |g, v| dws.depthwise_forward(g, &store, v));
    let stage2 = run(&store, stage1.clone(), |g, v| dws.pointwise.forward(g, &store, v));
    assert_eq!(full, stage2);
    assert_eq!(stage1.shape(), &[4, 3]);
    let w = store.value(dws.depthwise);
    let xin = random(&mut ChaCha8Rng::seed_from_u64(77), &[9, 3]);
    let d = run(&store, xin.clone(), |g, v| dws.depthwise_forward(g, &store, v));
    // window t=2 covers rows 4..7 of channel 1
    let by_hand: f64 = (0..3).map(|j| w.at(1, j) * xin.at(4 + j, 1)).sum();
    assert!((d.at(2, 1) - by_hand).abs() < 1e-12);
}

#[test]
fn dws_param_count_formula() {
    let mut spec = Conv1dSpec::new(1024, 4096, 8, 8);
    spec.bias = false;
    assert_eq!(spec.dws_param_count(), 1024 * 8 + 1024 * 4096);
    assert_eq!(spec.dws_param_count(), 4_202_496);
    spec.bias = true;
    assert_eq!(spec.dws_param_count(), 4_202_496 + 1024 + 4096);
}

#[test]
fn lora_zero_b_is_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(&mut rng, &[3, 4]);
    let a = random(&mut rng, &[2, 4]);
    let b = Tensor::zeros(&[3, 2]);
    let x = random(&mut rng, &[5, 4]);
    let y = lora_forward(&w, &a, &b, 16.0, &x).unwrap();
    assert_eq!(y, crate::tensor::matmul_t(&x, &w).unwrap());
    assert_eq!(lora_merge(&w, &a, &b, 16.0).unwrap(), w);
}

#[test]
fn lora_scaling_and_hand_example() {
    assert_eq!(LoraSpec::new(8, 16.0, &[AttnRole::Query]).scaling(), 2.0);
    let w = Tensor::eye(2);
    let a = t64(&[1, 2], &[1., 0.]);
    let b = t64(&[2, 1], &[0., 1.]);
    let x = t64(&[1, 2], &[3., 7.]);
    // y = x + [0, x0]
    let y = lora_forward(&w, &a, &b, 1.0, &x).unwrap();
    assert_eq!(y.data(), &[3.0, 10.0]);
    // merged W' = I + B·A, outer product [[0,0],[1,0]]
    let merged = lora_merge(&w, &a, &b, 1.0).unwrap();
    assert_eq!(merged.data(), &[1., 0., 1., 1.]);
}

#[test]
fn lora_rank_too_large_is_config_error() {
    let spec = LoraSpec::new(3, 16.0, &[AttnRole::Query]);
    assert!(matches!(spec.validate(2, 4), Err(LayerError::Config(_))));
    let w = Tensor::<f64>::zeros(&[2, 2]);
    let err = lora_merge(&w, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2, 3]), 1.0).unwrap_err();
    assert!(matches!(err, LayerError::Config(_)));
}

#[test]
fn lora_merge_matches_unmerged_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random(&mut rng, &[6, 5]);
    let a = random(&mut rng, &[2, 5]);
    let b = random(&mut rng, &[6, 2]);
    let merged = lora_merge(&w, &a, &b, 16.0).unwrap();
    for _ in 0..100 {
        let x = random(&mut rng, &[1, 5]);
        let y1 = lora_forward(&w, &a, &b, 16.0, &x).unwrap();
        let y2 = crate::tensor::matmul_t(&x, &merged).unwrap();
        for (p, q) in y1.data().iter().zip(y2.data()) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
        }
    }
}

#[test]
fn linear_with_zero_lora_is_bitwise_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f32>::new();
    let mut lin = Linear::build(&mut ParamBuilder::new(&mut store, &mut rng), LinearSpec::new(6, 6));
    let base = lin.clone();
    lin.attach_lora(&mut ParamBuilder::new(&mut store, &mut rng).sub("l"), &LoraSpec::new(2, 16.0, &[AttnRole::Query])).unwrap();
    let x = random(&mut rng, &[4, 6]).cast::<f32>();
    let g = Graph::new();
    let v = g.input(x);
    let a = base.forward(&g, &store, v).unwrap().value();
    let b = lin.forward(&g, &store, v).unwrap().value();
    assert_eq!(a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
               b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn lora_gradients_only_reach_factors_when_base_frozen() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let mut frozen = pb.with_trainable(false);
    let mut lin = Linear::build(&mut frozen, LinearSpec::new(4, 4));
    lin.attach_lora(&mut frozen, &LoraSpec::new(2, 16.0, &[AttnRole::Value])).unwrap();
    let g = Graph::new();
    let x = g.input(random(&mut rng, &[3, 4]));
    let loss = lin.forward(&g, &store, x).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    let got: Vec<_> = grads.param_grads().into_iter().map(|(id, _)| id).collect();
    let l = lin.lora.as_ref().unwrap();
    assert_eq!(got, vec![l.a, l.b]);
}

#[test]
fn conv1d_mlp_zero_input_zero_output() {
    let (mut store, mut rng) = builder_parts();
    let cfg = AdapterConfig::new(AdapterKind::Conv1dMLP, 3, 4, 2);
    let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
    let y = run(&store, Tensor::zeros(&[6, 3]), |g, v| ad.forward(g, &store, v));
    assert_eq!(y.shape(), &[3, 4]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn adapter_output_length() {
    for kind in [AdapterKind::Conv1dMLP, AdapterKind::DwsMLP, AdapterKind::Conv1dTransformer] {
        let (mut store, mut rng) = builder_parts();
        let mut cfg = AdapterConfig::new(kind, 4, 8, 4);
        cfg.heads = 2;
        let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
        let y = run(&store, Tensor::zeros(&[32, 4]), |g, v| ad.forward(g, &store, v));
        assert_eq!(y.shape(), &[8, 8], "{kind}");
    }
}

#[test]
fn conv1d_mlp_matches_layer_by_layer_oracle() {
    // d_enc = d_llm = 2, subsample 2; integer weights.
    let (mut store, mut rng) = builder_parts();
    let cfg = AdapterConfig::new(AdapterKind::Conv1dMLP, 2, 2, 2);
    let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
    let conv_w = store.find("conv.weight").unwrap();
    let conv_b = store.find("conv.bias").unwrap();
    let proj_w = store.find("proj.weight").unwrap();
    let proj_b = store.find("proj.bias").unwrap();
    // conv weight row o: [w(j=0,c=0), w(0,1), w(1,0), w(1,1)]
    *store.value_mut(conv_w) = t64(&[2, 4], &[1., 0., 0., 1., -1., 2., 1., 0.]);
    *store.value_mut(conv_b) = t64(&[2], &[0., 1.]);
    *store.value_mut(proj_w) = t64(&[2, 2], &[1., 1., 0., 2.]);
    *store.value_mut(proj_b) = t64(&[2], &[-1., 0.]);
    let x = t64(&[4, 2], &[1., 2., 3., 4., 0., 1., -1., 0.]);
    let y = run(&store, x.clone(), |g, v| ad.forward(g, &store, v));

    let gelu = |v: f64| v * 0.5 * (1.0 + libm::erf(v / 2f64.sqrt()));
    let mut expected = Vec::new();
    for t in 0..2 {
        let win = [x.at(2 * t, 0), x.at(2 * t, 1), x.at(2 * t + 1, 0), x.at(2 * t + 1, 1)];
        let c0 = win[0] * 1. + win[1] * 0. + win[2] * 0. + win[3] * 1. + 0.;
        let c1 = win[0] * -1. + win[1] * 2. + win[2] * 1. + win[3] * 0. + 1.;
        let (h0, h1) = (gelu(c0), gelu(c1));
        expected.push(h0 + h1 - 1.0);
        expected.push(2.0 * h1);
    }
    for (a, b) in y.data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{y:?} vs {expected:?}");
    }
}

#[test]
fn dws_mlp_has_fewer_params_than_conv_mlp() {
    for (d_enc, d_llm, s) in [(64, 128, 4), (1024, 4096, 8), (8, 8, 2)] {
        let conv = AdapterConfig::new(AdapterKind::Conv1dMLP, d_enc, d_llm, s).param_count();
        let dws = AdapterConfig::new(AdapterKind::DwsMLP, d_enc, d_llm, s).param_count();
        assert!(dws < conv);
    }
    assert_eq!(
        AdapterConfig::new(AdapterKind::Conv1dMLP, 1024, 4096, 8).param_count(),
        1024 * 8 * 4096 + 4096 + 4096 * 4096 + 4096
    );
}

#[test]
fn built_adapter_matches_param_count() {
    for kind in [AdapterKind::Conv1dMLP, AdapterKind::DwsMLP, AdapterKind::Conv1dTransformer] {
        let (mut store, mut rng) = builder_parts();
        let mut cfg = AdapterConfig::new(kind, 6, 8, 3);
        cfg.heads = 2;
        let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg.clone()).unwrap();
        assert_eq!(store.num_elements(&ad.ids()) as u64, cfg.param_count());
        assert_eq!(store.len(), ad.ids().len());
    }
}

#[test]
fn attention_masks() {
    let m = AttentionMask::Prefix(2);
    assert!(m.allows(0, 1));
    assert!(!m.allows(0, 2));
    assert!(m.allows(3, 1));
    assert!(m.allows(3, 3));
    assert!(!m.allows(2, 3));
    assert!(AttentionMask::Full.additive::<f32>(3).is_none());
    let c = AttentionMask::Causal.additive::<f64>(2).unwrap();
    assert_eq!(c.data()[1], f64::NEG_INFINITY);
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in [AdapterKind::Conv1dMLP, AdapterKind::DwsMLP, AdapterKind::Conv1dTransformer] {
        let mut store = ParamStore::new();
        let mut cfg = AdapterConfig::new(kind, 3, 4, 2);
        cfg.heads = 2;
        cfg.transformer_layers = 1;
        cfg.ffn_multiplier = 1.5;
        let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
        randomize(&mut store, &mut rng);
        let x = random(&mut rng, &[6, 3]);
        let report = gradcheck::check_with_params(&store, &[x], 1e-5, |g, s, v| {
            let y = ad.forward(g, s, v[0])?;
            Ok(y.mul(y)?.mean())
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{kind}: {report:?}");
    }

    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let block = TransformerBlock::build(
        &mut pb,
        BlockSpec { d: 4, heads: 2, ffn_hidden: 6 },
        Some(&LoraSpec::new(1, 2.0, &[AttnRole::Query, AttnRole::Key, AttnRole::Value])),
    )
    .unwrap();
    randomize(&mut store, &mut rng);
    let x = random(&mut rng, &[3, 4]);
    let mask = AttentionMask::Prefix(1).additive::<f64>(3).unwrap();
    let report = gradcheck::check_with_params(&store, &[x], 1e-5, |g, s, v| {
        let m = g.input(mask.clone());
        let y = block.forward(g, s, v[0], Some(m))?;
        Ok(y.mul(y)?.mean())
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

#[test]
fn adapter_kind_parsing() {
    assert_eq!("dwsmlp".parse::<AdapterKind>().unwrap(), AdapterKind::DwsMLP);
    assert!("mlp".parse::<AdapterKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adapter_always_emits_llm_width(
        kind in prop_oneof![Just(AdapterKind::Conv1dMLP), Just(AdapterKind::DwsMLP), Just(AdapterKind::Conv1dTransformer)],
        subsample in 1usize..5,
        extra in 0usize..12,
    ) {
        let (mut store, mut rng) = builder_parts();
        let mut cfg = AdapterConfig::new(kind, 3, 6, subsample);
        cfg.heads = 2;
        cfg.transformer_layers = 1;
        let ad = Adapter::build(&mut ParamBuilder::new(&mut store, &mut rng), cfg.clone()).unwrap();
        let len = subsample + extra;
        let y = run(&store, Tensor::zeros(&[len, 3]), |g, v| ad.forward(g, &store, v));
        prop_assert_eq!(y.shape(), &[cfg.output_len(len).unwrap(), 6]);
    }
}
