use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::metrics::Metrics;
use super::network::{pad_or_truncate, ClassifierModel, Frame, Tensor};
use super::{ClassifierConfig, ClassifierError};
use crate::dataset::EmbeddedProgram;
use crate::sequence::Label;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// ChaCha8 streams, so the split and the batch order never share draws with
// weight initialisation.
const SPLIT_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(format!("unknown optimizer {s:?} (expected sgd or adam)")),
        }
    }
}

impl FromStr for super::Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cross-entropy" | "bce" => Ok(super::Loss::CrossEntropy),
            "mse" => Ok(super::Loss::Mse),
            _ => Err(format!("unknown loss {s:?} (expected cross-entropy or mse)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean loss over the training examples seen during the epoch.
    pub train_loss: f64,
    /// Held-out metrics at the end of the epoch, absent without a holdout.
    pub metrics: Option<Metrics>,
}

fn target(label: Label) -> f64 {
    label.as_u8() as f64
}

impl ClassifierModel {
    /// Loss of one example and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, frame: &Frame, label: Label) -> Result<(f64, Vec<Tensor>), ClassifierError> {
        let cache = self.forward_cached(frame)?;
        let (loss, d_logit) = self.config.loss.value_and_grad(cache.logit, target(label));
        Ok((loss, self.backward(&cache, d_logit)))
    }

    pub fn example_loss(&self, frame: &Frame, label: Label) -> Result<f64, ClassifierError> {
        let z = self.logit(frame)?;
        Ok(self.config.loss.value_and_grad(z, target(label)).0)
    }
}

/// Splits record indices into (train, holdout), taking `round(n * holdout)`
/// of each class for the holdout while leaving at least one record of the
/// class in training.
pub fn stratified_split(records: &[EmbeddedProgram], holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [Label::Benign, Label::Malicious] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * holdout).round() as usize).min(idx.len().saturating_sub(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn check_classes(records: &[EmbeddedProgram]) -> Result<(), ClassifierError> {
    let first = records.first().ok_or(ClassifierError::EmptyDataset)?.label;
    if records.iter().all(|r| r.label == first) {
        return Err(ClassifierError::SingleClassDataset(first.as_u8()));
    }
    Ok(())
}

fn frames(records: &[EmbeddedProgram], config: &ClassifierConfig) -> Result<Vec<Frame>, ClassifierError> {
    records
        .iter()
        .map(|r| {
            if r.dim != config.channels {
                return Err(ClassifierError::ShapeMismatch(format!(
                    "{}: embedding dimension {} but the classifier expects {} channels",
                    r.source, r.dim, config.channels
                )));
            }
            Ok(pad_or_truncate(r, config.input_length))
        })
        .collect()
}

struct Trainer {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Trainer {
    fn new(model: &ClassifierModel) -> Self {
        let zeros = || model.params.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
        Trainer { step: 0, m: zeros(), v: zeros() }
    }

    fn apply(&mut self, model: &mut ClassifierModel, grads: &[Tensor]) {
        let lr = model.config.lr;
        self.step += 1;
        match model.config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(grads) {
                    for (w, d) in p.data.iter_mut().zip(&g.data) {
                        *w -= lr * d;
                    }
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (k, (p, g)) in model.params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k].data, &mut self.v[k].data);
                    for i in 0..p.data.len() {
                        let d = g.data[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * d;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * d * d;
                        p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }

    /// One pass over `order` in mini-batches; returns the mean example loss.
    fn epoch(
        &mut self,
        model: &mut ClassifierModel,
        frames: &[Frame],
        labels: &[Label],
        order: &[usize],
    ) -> Result<f64, ClassifierError> {
        let mut total = 0.0;
        for batch in order.chunks(model.config.batch_size) {
            let mut acc: Vec<Tensor> = model.params.iter().map(|t| Tensor::zeros(t.shape.clone())).collect();
            for &i in batch {
                let (loss, grads) = model.loss_and_grad(&frames[i], labels[i])?;
                total += loss;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.data.iter_mut().for_each(|x| *x *= scale);
            }
            self.apply(model, &acc);
        }
        Ok(total / order.len() as f64)
    }
}

/// Trains from a fresh initialisation with a stratified holdout, reporting
/// holdout metrics after every epoch.
pub fn train_classifier(
    records: &[EmbeddedProgram],
    config: &ClassifierConfig,
) -> Result<(ClassifierModel, Vec<EpochReport>), ClassifierError> {
    config.validate()?;
    check_classes(records)?;
    let all_frames = frames(records, config)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = stratified_split(records, config.holdout, config.seed);

    let mut model = ClassifierModel::init(config)?;
    let mut trainer = Trainer::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order = train_idx.clone();
    let mut reports = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let train_loss = trainer.epoch(&mut model, &all_frames, &labels, &order)?;
        if !train_loss.is_finite() || !model.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }
        let metrics = if test_idx.is_empty() {
            None
        } else {
            let preds = test_idx
                .iter()
                .map(|&i| Ok((model.forward(&all_frames[i])? >= config.threshold, labels[i] == Label::Malicious)))
                .collect::<Result<Vec<_>, ClassifierError>>()?;
            Some(Metrics::from_predictions(preds))
        };
        reports.push(EpochReport {
            epoch,
            train_loss,
            metrics,
        });
    }
    Ok((model, reports))
}

/// Continues training `model` on every record (no holdout). Returns the
/// dataset loss before training followed by the dataset loss after each
/// epoch.
pub fn train_full(model: &mut ClassifierModel, records: &[EmbeddedProgram]) -> Result<Vec<f64>, ClassifierError> {
    model.config.validate()?;
    if records.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let config = model.config.clone();
    let all_frames = frames(records, &config)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let mean_loss = |m: &ClassifierModel| -> Result<f64, ClassifierError> {
        let mut s = 0.0;
        for (f, &l) in all_frames.iter().zip(&labels) {
            s += m.example_loss(f, l)?;
        }
        Ok(s / all_frames.len() as f64)
    };

    let mut trainer = Trainer::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut losses = vec![mean_loss(model)?];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        trainer.epoch(model, &all_frames, &labels, &order)?;
        let loss = mean_loss(model)?;
        if !loss.is_finite() || !model.is_finite() {
            return Err(ClassifierError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
    }
    Ok(losses)
}

/// Mean loss of the model over `records`.
pub fn dataset_loss(model: &ClassifierModel, records: &[EmbeddedProgram]) -> Result<f64, ClassifierError> {
    if records.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let mut s = 0.0;
    for (f, r) in frames(records, &model.config)?.iter().zip(records) {
        s += model.example_loss(f, r.label)?;
    }
    Ok(s / records.len() as f64)
}

/// Probability that `program` is malicious.
pub fn predict(model: &ClassifierModel, program: &EmbeddedProgram) -> Result<f64, ClassifierError> {
    let frame = frames(std::slice::from_ref(program), &model.config)?.pop().expect("one frame");
    Ok(sigmoid(model.logit(&frame)?))
}

/// Scores every record, counting `p >= threshold` as a malicious prediction.
pub fn evaluate(model: &ClassifierModel, records: &[EmbeddedProgram], threshold: f64) -> Result<Metrics, ClassifierError> {
    if records.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let preds = records
        .iter()
        .map(|r| Ok((predict(model, r)? >= threshold, r.label == Label::Malicious)))
        .collect::<Result<Vec<_>, ClassifierError>>()?;
    Ok(Metrics::from_predictions(preds))
}
