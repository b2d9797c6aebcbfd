use std::collections::HashMap;

use op2vec::corpus::{build_vocabulary, corpus_pairs, generate_pairs, pair_count, TrainingPair, VocabularyMode};
use op2vec::embedding::{cosine_similarity, embeddings, init_model, train, EmbeddingModel, TrainConfig};
use op2vec::OpcodeSequence;
use op2vec_fixtures::synth::clustering_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(seq: &[usize], window: usize) -> HashMap<(usize, usize), usize> {
    let mut m = HashMap::new();
    for i in 0..seq.len() {
        for j in 0..seq.len() {
            if i != j && i.abs_diff(j) <= window {
                *m.entry((seq[i], seq[j])).or_insert(0) += 1;
            }
        }
    }
    m
}

#[test]
fn pairs_match_brute_force_on_500_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let len = rng.gen_range(0..=64);
        let window = rng.gen_range(1..=8);
        let v = rng.gen_range(1..=12);
        let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v)).collect();
        let pairs = generate_pairs(&seq, window);
        assert_eq!(pairs.len(), pair_count(len, window));
        let mut got = HashMap::new();
        for p in pairs {
            *got.entry((p.center, p.context)).or_insert(0) += 1;
        }
        assert_eq!(got, brute_force(&seq, window));
    }
}

#[test]
fn pairs_stay_inside_each_sequence() {
    let seqs = vec![
        OpcodeSequence::new("a", vec![0x01, 0x02]),
        OpcodeSequence::new("b", vec![0x03, 0x04]),
    ];
    let vocab = build_vocabulary(&seqs, VocabularyMode::Observed).unwrap();
    let pairs = corpus_pairs(&seqs, &vocab, 5);
    assert_eq!(pairs.len(), 4);
    assert!(pairs.iter().all(|p| (p.center < 2) == (p.context < 2)));
}

fn random_model(v: usize, d: usize, rng: &mut ChaCha8Rng) -> EmbeddingModel {
    let mut m = init_model(v, d, rng.gen());
    for w in m.w_in.iter_mut().chain(m.w_out.iter_mut()) {
        *w = rng.gen_range(-1.0..1.0);
    }
    m
}

#[test]
fn softmax_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let v = if i % 2 == 0 { 3 } else { 255 };
        let d = rng.gen_range(1..=8);
        let m = random_model(v, d, &mut rng);
        let p = m.forward(rng.gen_range(0..v));
        assert_eq!(p.len(), v);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn initial_loss_is_ln_vocabulary_size() {
    let m = init_model(255, 2, 3);
    assert!(m.w_out.iter().all(|&w| w == 0.0));
    for center in [0, 17, 254] {
        for context in [0, 100, 254] {
            let l = m.loss(TrainingPair { center, context });
            assert!((l - 5.541_264).abs() < 1e-5, "{l}");
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn train_step_follows_the_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let v = rng.gen_range(2..=10);
        let d = rng.gen_range(1..=4);
        let m = random_model(v, d, &mut rng);
        let pair = TrainingPair {
            center: rng.gen_range(0..v),
            context: rng.gen_range(0..v),
        };
        // with lr = 1 the step moves every weight by exactly minus its gradient
        let mut stepped = m.clone();
        stepped.train_step(pair, 1.0).unwrap();

        let numeric = |get: &dyn Fn(&mut EmbeddingModel) -> &mut f64| {
            let mut plus = m.clone();
            *get(&mut plus) += h;
            let mut minus = m.clone();
            *get(&mut minus) -= h;
            (plus.loss(pair) - minus.loss(pair)) / (2.0 * h)
        };
        for k in 0..m.w_in.len() {
            let analytic = m.w_in[k] - stepped.w_in[k];
            let n = numeric(&|x: &mut EmbeddingModel| &mut x.w_in[k]);
            worst = worst.max(rel_err(analytic, n));
        }
        for k in 0..m.w_out.len() {
            let analytic = m.w_out[k] - stepped.w_out[k];
            let n = numeric(&|x: &mut EmbeddingModel| &mut x.w_out[k]);
            worst = worst.max(rel_err(analytic, n));
        }
        let (_, gh, go) = m.gradients(pair);
        for (k, g) in gh.iter().enumerate() {
            assert!((g - (m.w_in[pair.center * d + k] - stepped.w_in[pair.center * d + k])).abs() < 1e-12);
        }
        for (k, g) in go.iter().enumerate() {
            assert!((g - (m.w_out[k] - stepped.w_out[k])).abs() < 1e-12);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn training_is_deterministic() {
    let c = clustering_corpus(2_000, 1);
    let seqs = vec![OpcodeSequence::new("c", c.tokens)];
    let vocab = build_vocabulary(&seqs, VocabularyMode::FullTable).unwrap();
    let pairs = corpus_pairs(&seqs, &vocab, 5);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 77,
        ..Default::default()
    };
    let (a, ta) = train(&pairs, vocab.len(), &cfg).unwrap();
    let (b, tb) = train(&pairs, vocab.len(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c2, _) = train(&pairs, vocab.len(), &TrainConfig { seed: 78, ..cfg }).unwrap();
    assert_ne!(a, c2);
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean within-group minus mean cross-group cosine similarity after
/// default training on the planted two-group corpus.
pub fn clustering_margin(seed: u64) -> f64 {
    let c = clustering_corpus(50_000, seed);
    let seqs = vec![OpcodeSequence::new("planted", c.tokens.clone())];
    let vocab = build_vocabulary(&seqs, VocabularyMode::FullTable).unwrap();
    let pairs = corpus_pairs(&seqs, &vocab, TrainConfig::default().window);
    let (model, _) = train(&pairs, vocab.len(), &TrainConfig::default()).unwrap();
    let table = embeddings(&model, &vocab);
    let cos = |a: u8, b: u8| cosine_similarity(table.get(a).unwrap(), table.get(b).unwrap()).unwrap();
    let (mut within, mut across) = (Vec::new(), Vec::new());
    for (gi, g) in c.groups.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            for &b in &g[i + 1..] {
                within.push(cos(a, b));
            }
            for &b in &c.groups[1 - gi] {
                if gi == 0 {
                    across.push(cos(a, b));
                }
            }
        }
    }
    mean(&within) - mean(&across)
}

#[test]
fn planted_groups_cluster() {
    let margin = clustering_margin(2024);
    assert!(margin >= 0.3, "margin {margin}");
}

proptest! {
    #[test]
    fn pair_count_closed_form(len in 0usize..200, window in 1usize..12) {
        let seq: Vec<usize> = (0..len).collect();
        prop_assert_eq!(generate_pairs(&seq, window).len(), pair_count(len, window));
    }
}
