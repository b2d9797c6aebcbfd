use op2vec::classifier::{
    decode_checkpoint, encode_checkpoint, evaluate, predict, train_classifier, train_full, ClassifierConfig,
    ClassifierModel, ConvSpec, Frame, Loss, Metrics, Optimizer,
};
use op2vec::dataset::EmbeddedProgram;
use op2vec::Label;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(loss: Loss, dense: Vec<usize>) -> ClassifierConfig {
    ClassifierConfig {
        input_length: 16,
        channels: 3,
        conv: vec![ConvSpec { filters: 3, kernel: 3 }, ConvSpec { filters: 2, kernel: 2 }],
        pool: vec![2],
        dense,
        loss,
        ..Default::default()
    }
}

fn random_frame(rng: &mut ChaCha8Rng, len: usize, channels: usize) -> Frame {
    Frame {
        len,
        channels,
        data: (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..24 {
        let loss = if trial % 2 == 0 { Loss::CrossEntropy } else { Loss::Mse };
        let mut cfg = match trial % 3 {
            // one conv filter feeding the output layer directly
            0 => ClassifierConfig {
                input_length: 16,
                channels: 3,
                conv: vec![ConvSpec { filters: 1, kernel: 3 }],
                pool: vec![],
                dense: vec![],
                loss,
                ..Default::default()
            },
            1 => small_config(loss, vec![]),
            _ => small_config(loss, vec![4]),
        };
        cfg.seed = trial;
        let mut model = ClassifierModel::init(&cfg).unwrap();
        for t in &mut model.params {
            for x in &mut t.data {
                *x += rng.gen_range(-0.1..0.1);
            }
        }
        let frame = random_frame(&mut rng, 16, 3);
        let label = if rng.gen() { Label::Malicious } else { Label::Benign };
        let (_, grads) = model.loss_and_grad(&frame, label).unwrap();
        for (ti, g) in grads.iter().enumerate() {
            for k in 0..g.data.len() {
                let mut plus = model.clone();
                plus.params[ti].data[k] += h;
                let mut minus = model.clone();
                minus.params[ti].data[k] -= h;
                let lp = plus.example_loss(&frame, label).unwrap();
                let lm = minus.example_loss(&frame, label).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let e = rel_err(g.data[k], numeric);
                // a max-pool or ReLU switching inside the +-h interval makes
                // the loss non-differentiable there; skip those few entries
                let kink = {
                    let (a, b) = (
                        model.example_loss(&frame, label).unwrap() - lm,
                        lp - model.example_loss(&frame, label).unwrap(),
                    );
                    (a - b).abs() > 1e-3 * a.abs().max(b.abs()).max(1e-9)
                };
                if !kink {
                    worst = worst.max(e);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 500, "only {checked} entries checked");
    assert!(worst < 1e-4, "max relative error {worst}");
}

fn separable(n_per_class: usize, len: usize, seed: u64) -> Vec<EmbeddedProgram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..2 * n_per_class {
        let label = if i % 2 == 0 { Label::Benign } else { Label::Malicious };
        let mut data = Vec::with_capacity(len * 2);
        for _ in 0..len {
            // benign rows near (-1, -1), malicious rows near (1, 1)
            let centre = if label == Label::Malicious { 1.0 } else { -1.0 };
            data.push(centre + rng.gen_range(-0.2..0.2));
            data.push(centre + rng.gen_range(-0.2..0.2));
        }
        out.push(EmbeddedProgram::new(label, 2, data, format!("s{i}")));
    }
    out
}

#[test]
fn separable_data_reaches_full_accuracy() {
    let records = separable(20, 40, 1);
    let cfg = ClassifierConfig {
        input_length: 32,
        conv: vec![ConvSpec { filters: 8, kernel: 4 }],
        pool: vec![],
        epochs: 10,
        batch_size: 4,
        lr: 0.01,
        ..Default::default()
    };
    let (model, reports) = train_classifier(&records, &cfg).unwrap();
    assert_eq!(reports.len(), 10);
    let m = reports.last().unwrap().metrics.unwrap();
    assert_eq!(m.accuracy, Some(1.0));
    assert_eq!(evaluate(&model, &records, 0.5).unwrap().accuracy, Some(1.0));
}

#[test]
fn memorizes_ten_records() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<EmbeddedProgram> = (0..10)
        .map(|i| {
            let label = if i < 5 { Label::Benign } else { Label::Malicious };
            EmbeddedProgram::new(label, 2, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(), format!("r{i}"))
        })
        .collect();
    for optimizer in [Optimizer::Adam, Optimizer::Sgd] {
        let cfg = ClassifierConfig {
            input_length: 16,
            conv: vec![ConvSpec { filters: 8, kernel: 3 }],
            pool: vec![],
            dense: vec![8],
            optimizer,
            lr: if optimizer == Optimizer::Adam { 0.01 } else { 0.1 },
            epochs: 200,
            batch_size: 10,
            ..Default::default()
        };
        let mut model = ClassifierModel::init(&cfg).unwrap();
        let losses = train_full(&mut model, &records).unwrap();
        assert_eq!(losses.len(), 201);
        let (first, last) = (losses[0], losses[200]);
        assert!(last < 0.1 * first, "{optimizer:?}: {first} -> {last}");
    }
}

#[test]
fn flipped_output_layer_mirrors_predictions() {
    // With the output bias at zero, negating the output weights maps
    // p to 1 - p, so at threshold 0.5 every prediction flips unless p is
    // exactly one half.
    let records = separable(15, 24, 3);
    let cfg = ClassifierConfig {
        input_length: 24,
        conv: vec![ConvSpec { filters: 4, kernel: 3 }],
        pool: vec![],
        dense: vec![3],
        ..Default::default()
    };
    let model = ClassifierModel::init(&cfg).unwrap();
    let mut mirrored = model.clone();
    let n = mirrored.params.len();
    mirrored.params[n - 2].data.iter_mut().for_each(|w| *w = -*w);
    assert!(mirrored.params[n - 1].data.iter().all(|&b| b == 0.0));
    let flipped: Vec<EmbeddedProgram> = records
        .iter()
        .map(|r| EmbeddedProgram::new(r.label.flipped(), r.dim, r.data.clone(), r.source.clone()))
        .collect();
    for r in &records {
        let p = predict(&model, r).unwrap();
        let q = predict(&mirrored, r).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
        assert_ne!(p, 0.5);
    }
    let a = evaluate(&model, &records, 0.5).unwrap();
    let b = evaluate(&mirrored, &flipped, 0.5).unwrap();
    assert_eq!((a.tp, a.fp, a.tn, a.fn_), (b.tn, b.fn_, b.tp, b.fp));
    assert_eq!(a.accuracy, b.accuracy);
}

#[test]
fn training_is_deterministic() {
    let records = separable(10, 20, 5);
    let cfg = ClassifierConfig {
        input_length: 16,
        conv: vec![ConvSpec { filters: 4, kernel: 3 }],
        pool: vec![],
        epochs: 3,
        seed: 11,
        ..Default::default()
    };
    let (a, ra) = train_classifier(&records, &cfg).unwrap();
    let (b, rb) = train_classifier(&records, &cfg).unwrap();
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    assert_eq!(ra, rb);
}

#[test]
fn metrics_json_uses_spec_field_names() {
    let m = Metrics::from_counts(3, 1, 4, 2);
    let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    for k in ["tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), dense in proptest::collection::vec(1usize..5, 0..3)) {
        let mut cfg = small_config(Loss::CrossEntropy, dense);
        cfg.seed = seed;
        let mut m = ClassifierModel::init(&cfg).unwrap();
        for t in &mut m.params {
            t.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode_checkpoint(&back), bytes);
    }
}
