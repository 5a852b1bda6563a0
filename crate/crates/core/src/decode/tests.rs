use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const A: TokenId = 0;
const B: TokenId = 1;

fn prefix_seed(seed: u64, prefix: &[TokenId]) -> u64 {
    // FNV-1a over the prefix, mixed with the scorer seed.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &t in prefix {
        h ^= t as u64 + 1;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic pseudo-random distribution per prefix.
fn random_scorer(seed: u64, v: usize) -> FnScorer<impl FnMut(&[TokenId]) -> Vec<f64>> {
    FnScorer {
        vocab_size: v,
        eos: (v - 1) as TokenId,
        f: move |prefix: &[TokenId]| {
            let mut rng = ChaCha8Rng::seed_from_u64(prefix_seed(seed, prefix));
            let logits: Vec<f64> = (0..v).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
            logits.iter().map(|x| x - lse).collect()
        },
    }
}

fn params(beam: usize, max_len: usize, nrns: usize, lp: f64) -> DecodeParams {
    DecodeParams {
        beam_size: beam,
        max_length: max_len,
        nrns,
        length_penalty: lp,
    }
}

#[test]
fn defaults() {
    let p = DecodeParams::default();
    assert_eq!((p.beam_size, p.max_length, p.nrns, p.length_penalty), (5, 256, 0, 1.0));
}

#[test]
fn ban_examples() {
    let lp = vec![-1.0, -2.0, -3.0];
    assert_eq!(ban_repeated_ngrams(&[A, A], 0, &lp), lp);
    let banned = ban_repeated_ngrams(&[A, A], 2, &lp);
    assert_eq!(banned[A as usize], f64::NEG_INFINITY);
    assert_eq!(&banned[1..], &lp[1..]);
    assert_eq!(ban_repeated_ngrams(&[A], 3, &lp), lp);
    // [a b a] with n=2: context a, bigram (a,b) exists, so b is banned.
    assert_eq!(banned_tokens(&[A, B, A], 2), vec![B]);
    // n=1 bans anything already emitted.
    assert_eq!(banned_tokens(&[B, A, B], 1), vec![A, B]);
    assert_eq!(banned_tokens(&[A, B, A, B], 3), vec![A]);
}

#[test]
fn finalize_examples() {
    assert_eq!(finalize_score(-2.0, 2, 1.0), -1.0);
    assert_eq!(finalize_score(-2.5, 5, 0.0), -2.5);
    assert_eq!(finalize_score(-2.0, 4, -0.5), -4.0);
}

#[test]
fn certain_eos_gives_the_empty_hypothesis() {
    let mut s = FnScorer {
        vocab_size: 3,
        eos: 2,
        f: |_: &[TokenId]| vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0],
    };
    let out = beam_search(&mut s, &DecodeParams::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].tokens, vec![2]);
    assert!(out[0].finished);
    assert_eq!(out[0].sum_logprob, 0.0);
}

#[test]
fn beam_one_is_greedy_for_non_positive_penalty() {
    for seed in 0..200 {
        for lp in [-0.5, 0.0] {
            for nrns in [0, 2] {
                let p = params(1, 6, nrns, lp);
                let beam = beam_search(&mut random_scorer(seed, 4), &p).unwrap();
                let greedy = greedy_decode(&mut random_scorer(seed, 4), &p).unwrap();
                assert_eq!(beam[0].tokens, greedy.tokens, "seed {seed} lp {lp} nrns {nrns}");
            }
        }
    }
}

#[test]
fn full_width_beam_matches_exhaustive() {
    for seed in 0..25 {
        for lp in [-0.5, 0.0, 0.5, 1.0] {
            for nrns in [0, 2, 3] {
                let p = params(81, 4, nrns, lp);
                let best = exhaustive_decode(&mut random_scorer(seed, 3), &p).unwrap();
                let beam = beam_search(&mut random_scorer(seed, 3), &p).unwrap();
                assert_eq!(beam[0].tokens, best.tokens, "seed {seed} lp {lp} nrns {nrns}");
            }
        }
    }
}

#[test]
fn exhaustive_follows_a_forced_path() {
    let forced = [B, A, B, 2];
    let mut s = FnScorer {
        vocab_size: 3,
        eos: 2,
        f: |prefix: &[TokenId]| {
            let mut v = vec![-30.0; 3];
            v[forced[prefix.len().min(3)] as usize] = -1e-12;
            v
        },
    };
    let best = exhaustive_decode(&mut s, &params(1, 6, 0, 1.0)).unwrap();
    assert_eq!(best.tokens, forced.to_vec());
}

#[test]
fn exhaustive_hand_enumeration() {
    // V = {a, EOS}, max_length 2: sequences [EOS], [a EOS], [a a].
    let mut s = FnScorer {
        vocab_size: 2,
        eos: 1,
        f: |prefix: &[TokenId]| match prefix.len() {
            0 => vec![0.6f64.ln(), 0.4f64.ln()],
            _ => vec![0.9f64.ln(), 0.1f64.ln()],
        },
    };
    // lp = 0: [EOS] 0.4, [a EOS] 0.06, [a a] 0.54 → [a a].
    assert_eq!(exhaustive_decode(&mut s, &params(1, 2, 0, 0.0)).unwrap().tokens, vec![A, A]);
    // nrns = 1 forbids [a a], leaving [EOS].
    assert_eq!(exhaustive_decode(&mut s, &params(1, 2, 1, 0.0)).unwrap().tokens, vec![1]);
}

#[test]
fn nrns_one_bounds_text_length() {
    // V = {a, b, EOS} with EOS very unlikely: with no repeats, at most two
    // text tokens fit before EOS is forced.
    let mut s = FnScorer {
        vocab_size: 3,
        eos: 2,
        f: |_: &[TokenId]| vec![-0.01, -0.02, -20.0],
    };
    let best = exhaustive_decode(&mut s, &params(1, 6, 1, 1.0)).unwrap();
    assert_eq!(best.tokens.len(), 3);
    assert_eq!(*best.tokens.last().unwrap(), 2);
    let beam = beam_search(&mut s, &params(4, 6, 1, 1.0)).unwrap();
    assert!(beam.iter().all(|h| h.text_tokens(2).len() <= 2));
}

#[test]
fn nrns_invariant_on_random_decodes() {
    for seed in 0..150 {
        for n in [2, 3, 5] {
            let p = params(4, 20, n, 1.0);
            for h in beam_search(&mut random_scorer(seed, 4), &p).unwrap() {
                assert!(!has_repeated_ngram(&h.tokens, n), "{:?} n={n}", h.tokens);
            }
        }
    }
}

#[test]
fn sum_logprob_is_recomputable() {
    for seed in 0..30 {
        let p = params(3, 8, 2, 0.5);
        let mut s = random_scorer(seed, 5);
        for h in beam_search(&mut random_scorer(seed, 5), &p).unwrap() {
            let sum: f64 = (0..h.tokens.len())
                .map(|i| s.log_probs(&h.tokens[..i]).unwrap()[h.tokens[i] as usize])
                .sum();
            assert!((sum - h.sum_logprob).abs() < 1e-9);
            assert_eq!(h.score, finalize_score(h.sum_logprob, h.tokens.len(), 0.5));
        }
    }
}

#[test]
fn results_are_sorted_and_deterministic() {
    let p = params(5, 10, 0, 1.0);
    let a = beam_search(&mut random_scorer(7, 6), &p).unwrap();
    let b = beam_search(&mut random_scorer(7, 6), &p).unwrap();
    assert_eq!(a, b);
    assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(a.len() <= 5);
}

#[test]
fn lowering_lp_never_promotes_the_longer_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = [1.5, 1.0, 0.5, 0.0, -0.5, -1.0];
    for _ in 0..2000 {
        let (s1, l1) = (-rng.random_range(0.01..10.0), rng.random_range(1..10usize));
        let (s2, l2) = (-rng.random_range(0.01..10.0), l1 + rng.random_range(1..10usize));
        let mut longer_ahead = true;
        for lp in grid {
            let ahead = finalize_score(s2, l2, lp) > finalize_score(s1, l1, lp);
            assert!(longer_ahead || !ahead, "longer hypothesis regained the lead at lp={lp}");
            longer_ahead = ahead;
        }
    }
}

#[test]
fn wider_beam_reaches_the_optimum() {
    for seed in 0..40 {
        for lp in [0.0, 1.0] {
            let full = beam_search(&mut random_scorer(seed, 3), &params(81, 4, 0, lp)).unwrap()[0].score;
            for b in [1, 2, 3, 5] {
                let narrow = beam_search(&mut random_scorer(seed, 3), &params(b, 4, 0, lp)).unwrap()[0].score;
                assert!(full >= narrow);
            }
        }
    }
}

#[test]
fn errors() {
    let mut wrong = FnScorer {
        vocab_size: 3,
        eos: 2,
        f: |_: &[TokenId]| vec![0.0, 0.0],
    };
    assert_eq!(
        beam_search(&mut wrong, &DecodeParams::default()),
        Err(DecodeError::WrongSize { expected: 3, got: 2 })
    );
    assert!(matches!(
        exhaustive_decode(&mut random_scorer(0, 10), &params(1, 7, 0, 1.0)),
        Err(DecodeError::TooLarge(_))
    ));
    assert!(beam_search(&mut random_scorer(0, 3), &params(0, 4, 0, 1.0)).is_err());
}
