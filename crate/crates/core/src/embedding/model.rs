use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingError;
use crate::corpus::{TrainingPair, DEFAULT_WINDOW};

/// Skip-gram hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window: usize,
    pub dim: usize,
    pub lr0: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: DEFAULT_WINDOW,
            dim: 2,
            lr0: 0.025,
            epochs: 5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |msg: &str| Err(EmbeddingError::InvalidConfig(msg.to_string()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be a positive finite number");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }
}

/// One-hidden-layer skip-gram network with a linear hidden layer and a full
/// softmax output.
///
/// `w_in` is V x D, one row per vocabulary index; a one-hot input selects a
/// row, so the rows are the learned embeddings. (Written the other way round,
/// D x V, the embeddings are its columns.) `w_out` is D x V, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub vocab_size: usize,
    pub dim: usize,
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub seed: u64,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub epoch_mean_loss: Vec<f64>,
    pub pair_count: usize,
}

impl TrainTrace {
    /// `epoch,mean_loss` CSV with a header row; epochs count from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, loss) in self.epoch_mean_loss.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, loss));
        }
        s
    }
}

/// Input weights uniform in [-0.5/D, 0.5/D], output weights zero.
pub fn init_model(vocab_size: usize, dim: usize, seed: u64) -> EmbeddingModel {
    assert!(vocab_size >= 2 && dim >= 1, "need V >= 2 and D >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / dim as f64;
    let w_in = (0..vocab_size * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) * scale)
        .collect();
    EmbeddingModel {
        vocab_size,
        dim,
        w_in,
        w_out: vec![0.0; dim * vocab_size],
        seed,
    }
}

/// Softmax with the max logit subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

impl EmbeddingModel {
    pub fn input_row(&self, index: usize) -> &[f64] {
        &self.w_in[index * self.dim..(index + 1) * self.dim]
    }

    pub fn input_row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.w_in[index * self.dim..(index + 1) * self.dim]
    }

    /// Output-layer logits for a center index.
    pub fn logits(&self, center: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let h = self.input_row(center);
        let mut u = vec![0.0; v];
        for (d, &hd) in h.iter().enumerate() {
            let row = &self.w_out[d * v..(d + 1) * v];
            for (uj, &w) in u.iter_mut().zip(row) {
                *uj += w * hd;
            }
        }
        u
    }

    /// Probability of every vocabulary entry appearing in the window of
    /// `center`.
    pub fn forward(&self, center: usize) -> Vec<f64> {
        softmax(&self.logits(center))
    }

    /// Cross-entropy `-ln p(context | center)`.
    pub fn loss(&self, pair: TrainingPair) -> f64 {
        -self.forward(pair.center)[pair.context].ln()
    }

    /// Loss and its gradient with respect to the center's input row (D) and
    /// all of `w_out` (D x V). No other input row receives gradient.
    pub fn gradients(&self, pair: TrainingPair) -> (f64, Vec<f64>, Vec<f64>) {
        let v = self.vocab_size;
        let mut err = self.forward(pair.center);
        let loss = -err[pair.context].ln();
        err[pair.context] -= 1.0;
        let h = self.input_row(pair.center);
        let mut grad_h = vec![0.0; self.dim];
        let mut grad_out = vec![0.0; self.dim * v];
        for d in 0..self.dim {
            let row = &self.w_out[d * v..(d + 1) * v];
            grad_h[d] = row.iter().zip(&err).map(|(w, e)| w * e).sum();
            for j in 0..v {
                grad_out[d * v + j] = err[j] * h[d];
            }
        }
        (loss, grad_h, grad_out)
    }

    /// One SGD step on a pair. Returns the loss before the update.
    pub fn train_step(&mut self, pair: TrainingPair, lr: f64) -> Result<f64, EmbeddingError> {
        let v = self.vocab_size;
        let dim = self.dim;
        let mut err = self.forward(pair.center);
        let loss = -err[pair.context].ln();
        if !loss.is_finite() {
            return Err(EmbeddingError::NonFiniteLoss { epoch: 0, step: 0 });
        }
        err[pair.context] -= 1.0;

        let base = pair.center * dim;
        let h = &mut self.w_in[base..base + dim];
        let mut grad_h = vec![0.0; dim];
        for ((row, &hd), g) in self.w_out.chunks_exact_mut(v).zip(h.iter()).zip(&mut grad_h) {
            for (w, &e) in row.iter_mut().zip(&err) {
                *g += *w * e;
                *w -= lr * e * hd;
            }
        }
        for (x, g) in h.iter_mut().zip(&grad_h) {
            *x -= lr * g;
        }
        Ok(loss)
    }

    pub fn is_finite(&self) -> bool {
        self.w_in.iter().chain(&self.w_out).all(|x| x.is_finite())
    }
}

/// Learning rate after `step` of `total` steps: linear from `lr0` down to
/// `lr0 * 1e-4` on the final step.
pub fn learning_rate(lr0: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let progress = step as f64 / (total - 1) as f64;
    lr0 * (1.0 - (1.0 - 1e-4) * progress)
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Single-threaded SGD over `pairs`. Bit-for-bit deterministic for a given
/// pair list and config.
pub fn train(
    pairs: &[TrainingPair],
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainTrace), EmbeddingError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    if let Some(p) = pairs.iter().find(|p| p.center >= vocab_size || p.context >= vocab_size) {
        return Err(EmbeddingError::IndexOutOfRange {
            index: p.center.max(p.context),
            size: vocab_size,
        });
    }
    let mut model = init_model(vocab_size, config.dim, config.seed);
    let mut rng = shuffle_rng(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let total = config.epochs * pairs.len();
    let mut trace = TrainTrace {
        epoch_mean_loss: Vec::with_capacity(config.epochs),
        pair_count: pairs.len(),
    };

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for (i, &k) in order.iter().enumerate() {
            let step = epoch * pairs.len() + i;
            let lr = learning_rate(config.lr0, step, total);
            sum += model.train_step(pairs[k], lr).map_err(|_| EmbeddingError::NonFiniteLoss {
                epoch: epoch + 1,
                step: i,
            })?;
        }
        trace.epoch_mean_loss.push(sum / pairs.len() as f64);
    }
    Ok((model, trace))
}

/// Data-parallel variant: each epoch the shuffled pairs are cut into
/// `workers` shards, each shard trains its own replica, and the replicas are
/// averaged. Not covered by the determinism guarantees of [`train`].
pub fn train_parallel(
    pairs: &[TrainingPair],
    vocab_size: usize,
    config: &TrainConfig,
    workers: usize,
) -> Result<(EmbeddingModel, TrainTrace), EmbeddingError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let workers = workers.max(1);
    let mut model = init_model(vocab_size, config.dim, config.seed);
    let mut rng = shuffle_rng(config.seed);
    let mut shuffled = pairs.to_vec();
    let shard_len = pairs.len().div_ceil(workers);
    let total = config.epochs * shard_len;
    let mut trace = TrainTrace {
        epoch_mean_loss: Vec::with_capacity(config.epochs),
        pair_count: pairs.len(),
    };

    for epoch in 0..config.epochs {
        if config.shuffle {
            shuffled.shuffle(&mut rng);
        }
        let results: Vec<Result<(EmbeddingModel, f64), EmbeddingError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = shuffled
                .chunks(shard_len)
                .map(|shard| {
                    let mut replica = model.clone();
                    scope.spawn(move || {
                        let mut sum = 0.0;
                        for (i, &pair) in shard.iter().enumerate() {
                            let lr = learning_rate(config.lr0, epoch * shard_len + i, total);
                            sum += replica.train_step(pair, lr).map_err(|_| EmbeddingError::NonFiniteLoss {
                                epoch: epoch + 1,
                                step: i,
                            })?;
                        }
                        Ok((replica, sum))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let replicas = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let n = replicas.len() as f64;
        model.w_in.iter_mut().for_each(|x| *x = 0.0);
        model.w_out.iter_mut().for_each(|x| *x = 0.0);
        let mut loss_sum = 0.0;
        for (replica, sum) in &replicas {
            for (m, r) in model.w_in.iter_mut().zip(&replica.w_in) {
                *m += r / n;
            }
            for (m, r) in model.w_out.iter_mut().zip(&replica.w_out) {
                *m += r / n;
            }
            loss_sum += sum;
        }
        trace.epoch_mean_loss.push(loss_sum / pairs.len() as f64);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_255: f64 = 5.541_263_545_158_426;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_model(255, 2, 7);
        let b = init_model(255, 2, 7);
        assert_eq!(a, b);
        assert!(a.w_in.iter().all(|x| x.abs() <= 0.25));
        assert!(a.w_out.iter().all(|&x| x == 0.0));
        assert_ne!(init_model(3, 2, 1).w_in, init_model(3, 2, 2).w_in);
    }

    #[test]
    fn zero_output_weights_give_uniform_prediction() {
        let m = init_model(255, 2, 3);
        let p = m.forward(17);
        assert!(p.iter().all(|&x| (x - 1.0 / 255.0).abs() < 1e-15));
        let loss = m.clone().train_step(TrainingPair { center: 4, context: 9 }, 0.1).unwrap();
        assert!((loss - LN_255).abs() < 1e-5);
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        // V = 3, D = 2, h = (1, 0), first output row (1, 2, 3) -> logits (1, 2, 3)
        let mut m = init_model(3, 2, 0);
        m.input_row_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.w_out = vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0];
        assert_eq!(m.logits(0), vec![1.0, 2.0, 3.0]);
        let p = m.forward(0);
        let expect = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let mut m = init_model(10, 3, 5);
        let pair = TrainingPair { center: 2, context: 7 };
        let first = m.train_step(pair, 0.1).unwrap();
        let mut last = first;
        for _ in 1..50 {
            last = m.train_step(pair, 0.1).unwrap();
        }
        assert!(last < first);
    }

    #[test]
    fn nonfinite_loss_is_reported() {
        let mut m = init_model(3, 1, 0);
        m.w_in[0] = f64::NAN;
        assert!(matches!(
            m.train_step(TrainingPair { center: 0, context: 1 }, 0.1),
            Err(EmbeddingError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(learning_rate(0.025, 0, 100), 0.025);
        assert!((learning_rate(0.025, 99, 100) - 0.025e-4).abs() < 1e-18);
        assert_eq!(learning_rate(0.5, 0, 1), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { window: 0, ..Default::default() },
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { lr0: 0.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(EmbeddingError::InvalidConfig(_))));
        }
        assert!(matches!(
            train(&[], 5, &TrainConfig::default()),
            Err(EmbeddingError::EmptyCorpus)
        ));
    }

    #[test]
    fn trace_csv() {
        let t = TrainTrace {
            epoch_mean_loss: vec![2.5, 1.25],
            pair_count: 4,
        };
        assert_eq!(t.to_csv(), "epoch,mean_loss\n1,2.5\n2,1.25\n");
    }

    #[test]
    fn parallel_training_learns() {
        let pairs: Vec<_> = (0..400)
            .map(|i| TrainingPair {
                center: i % 4,
                context: (i % 4 + 1) % 4,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            lr0: 0.2,
            ..Default::default()
        };
        let (_, trace) = train_parallel(&pairs, 4, &cfg, 3).unwrap();
        assert!(trace.epoch_mean_loss.last().unwrap() < &trace.epoch_mean_loss[0]);
    }
}
