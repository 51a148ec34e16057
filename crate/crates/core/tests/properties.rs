use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use auxsumm_core::corpus::{chunk_corpus, preprocess_text, Stopwords, TweetTokens};
use auxsumm_core::eval::{rouge_l, rouge_n};
use auxsumm_core::numerics::{grad_check_inputs, kernels, Graph, Op, Ops, Tensor};
use auxsumm_core::train::batch_indices;
use auxsumm_core::vocab::{decode_ids, encode_extended, Vocabulary, UNK};

const OPS: usize = 23;

fn vec_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// One primitive with randomly shaped inputs.
fn primitive(k: usize, rng: &mut ChaCha8Rng) -> (Op, Vec<Tensor>) {
    let n = rng.gen_range(1..6);
    let m = rng.gen_range(1..5);
    let v = |rng: &mut ChaCha8Rng, len| vec_in(rng, len, -2.0, 2.0);
    match k {
        0 => (Op::MatVec, vec![mat(rng, n, m), v(rng, m)]),
        1 => {
            let p = rng.gen_range(1..4);
            (Op::MatMul, vec![mat(rng, n, m), mat(rng, m, p)])
        }
        2 => (Op::Add, vec![v(rng, n), v(rng, n)]),
        3 => (Op::Mul, vec![v(rng, n), v(rng, n)]),
        4 => (Op::AddRow, vec![mat(rng, n, m), v(rng, m)]),
        5 => (Op::Outer, vec![v(rng, n), v(rng, m)]),
        6 => (Op::Tanh, vec![v(rng, n)]),
        7 => (Op::Sigmoid, vec![v(rng, n)]),
        8 => (Op::Softmax, vec![v(rng, n)]),
        9 => (Op::Log { floor: 1e-12 }, vec![vec_in(rng, n, 0.1, 3.0)]),
        10 => (Op::Concat, vec![v(rng, n), v(rng, m), v(rng, 2)]),
        11 => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            (Op::Slice { start, len }, vec![v(rng, n)])
        }
        12 => (Op::Embed { id: rng.gen_range(0..n) }, vec![mat(rng, n, m)]),
        13 => (Op::Stack, (0..n).map(|_| v(rng, m)).collect()),
        14 => (Op::WeightedSum, vec![vec_in(rng, n, 0.0, 1.0), mat(rng, n, m)]),
        15 => (Op::Min, vec![v(rng, n), v(rng, n)]),
        16 => (Op::Sum, vec![v(rng, n)]),
        17 => (Op::ScalarMix, vec![vec_in(rng, 1, 0.05, 0.95), v(rng, n), v(rng, n)]),
        18 => (Op::GatedMix, vec![vec_in(rng, 1, -4.0, 4.0), v(rng, n), v(rng, n)]),
        19 => (Op::Scale { factor: rng.gen_range(-3.0..3.0) }, vec![v(rng, n)]),
        20 => {
            let size = rng.gen_range(1..6);
            let index = (0..n).map(|_| rng.gen_range(0..size)).collect();
            (Op::ScatterAdd { index, size }, vec![v(rng, n)])
        }
        21 => (Op::Pad { size: n + rng.gen_range(0..4) }, vec![v(rng, n)]),
        _ => {
            if rng.gen_bool(0.5) {
                (Op::Pick { index: rng.gen_range(0..n) }, vec![v(rng, n)])
            } else {
                (Op::AddN, (0..m).map(|_| v(rng, n)).collect())
            }
        }
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, max: usize, alphabet: &[&str]) -> Vec<String> {
    (0..rng.gen_range(0..=max))
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
        .collect()
}

proptest! {
    #[test]
    fn every_primitive_matches_central_differences(k in 0..OPS, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (op, inputs) = primitive(k, &mut rng);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let shape = kernels::forward(&op, &refs).unwrap().shape().to_vec();
        let len: usize = shape.iter().product();
        // Contract the output with fixed random weights to get a scalar.
        let weights = Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check_inputs(&inputs, 1e-6, |g: &mut Graph<'_>, vars| {
            let vr: Vec<_> = vars.iter().collect();
            let out = g.apply(op.clone(), &vr)?;
            let w = g.constant(weights.clone());
            let y = g.mul(&out, &w)?;
            g.sum(&y)
        }).unwrap();
        prop_assert!(
            report.max_abs_error < 1e-7 || report.max_rel_error < 1e-6,
            "{}: abs {:e}, rel {:e}", op.name(), report.max_abs_error, report.max_rel_error
        );
    }

    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-30.0f64..30.0, 1..10), c in -100.0f64..100.0) {
        let a = kernels::softmax_slice(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = kernels::softmax_slice(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preprocessing_is_idempotent(text in "[ a-zA-Z0-9@#:/.!,'()-]{0,80}") {
        let sw = Stopwords::english();
        let once = preprocess_text(&text, &sw);
        let twice = preprocess_text(&once.join(" "), &sw);
        prop_assert_eq!(&once, &twice);
        for t in &once {
            prop_assert!(t.chars().count() >= 3);
            prop_assert!(!sw.contains(t));
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }

    #[test]
    fn chunking_preserves_the_token_stream(seed in any::<u64>(), budget in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tweets: Vec<TweetTokens> = (0..rng.gen_range(0..12))
            .map(|i| TweetTokens { id: format!("t{i}"), tokens: random_tokens(&mut rng, 15, &["aaa", "bbb", "ccc"]) })
            .collect();
        let chunks = chunk_corpus(&tweets, budget).unwrap();
        let flat: Vec<String> = chunks.iter().flat_map(|c| c.source_tokens.clone()).collect();
        let orig: Vec<String> = tweets.iter().flat_map(|t| t.tokens.clone()).collect();
        prop_assert_eq!(flat, orig);
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(!c.source_tokens.is_empty() && c.source_tokens.len() <= budget);
            if i + 1 < chunks.len() {
                prop_assert_eq!(c.source_tokens.len(), budget);
            }
        }
    }

    #[test]
    fn extended_encoding_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocabulary::from_tokens(["aaa", "bbb", "ccc"]).unwrap();
        let src = random_tokens(&mut rng, 12, &["aaa", "bbb", "ccc", "xxx", "yyy"]);
        let enc = encode_extended(&src, &vocab);
        prop_assert_eq!(decode_ids(&enc.extended_ids, &vocab, &enc.oov_tokens).unwrap(), src.clone());
        for (k, t) in src.iter().enumerate() {
            let in_v = vocab.id(t).is_some();
            prop_assert_eq!(enc.base_ids[k] == UNK, !in_v);
            prop_assert_eq!(enc.extended_ids[k] >= vocab.size(), !in_v);
        }
    }

    #[test]
    fn rouge_f1_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tokens(&mut rng, 10, &["a", "b", "c"]);
        let b = random_tokens(&mut rng, 10, &["a", "b", "c"]);
        for (x, y) in [
            (rouge_n(&a, &b, 1).unwrap(), rouge_n(&b, &a, 1).unwrap()),
            (rouge_n(&a, &b, 2).unwrap(), rouge_n(&b, &a, 2).unwrap()),
            (rouge_l(&a, &b), rouge_l(&b, &a)),
        ] {
            prop_assert!((x.f1 - y.f1).abs() < 1e-15);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert!((0.0..=1.0).contains(&x.f1));
        }
    }

    #[test]
    fn each_epoch_visits_every_example_once(n in 1usize..40, bs in 1usize..10, seed in any::<u64>(), epoch in 0usize..5) {
        let per = n.div_ceil(bs);
        let mut seen: Vec<usize> = (epoch * per..(epoch + 1) * per)
            .flat_map(|i| batch_indices(n, bs, seed, i))
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
