//! End-to-end classifier over embedded programs: a small 1-D CNN that reads
//! the D embedding components as input channels.

mod checkpoint;
mod loss;
mod metrics;
mod network;
mod train;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, O2VC_MAGIC, O2VC_VERSION};
pub use loss::{mse_grad, mse_loss, sigmoid, Loss};
pub use metrics::Metrics;
pub use network::{pad_or_truncate, ClassifierModel, Frame, Tensor};
pub use train::{
    dataset_loss, evaluate, predict, stratified_split, train_classifier, train_full, EpochReport, Optimizer,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data contains only label {0}")]
    SingleClassDataset(u8),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("bad magic {0:02x?}, expected \"O2VC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported O2VC version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Architecture and training hyperparameters.
///
/// The network is `conv -> ReLU -> max-pool` for every conv layer but the
/// last, `conv -> ReLU -> global max-pool` for the last, then the hidden
/// dense layers (each followed by ReLU) and a single-output dense layer
/// whose sigmoid is the probability of the malicious class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_length: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    /// Max-pool width after each conv layer except the last.
    pub pool: Vec<usize>,
    /// Hidden dense widths; the output layer is implicit.
    pub dense: Vec<usize>,
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Fraction of each class held out for per-epoch evaluation.
    pub holdout: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_length: 2048,
            channels: 2,
            conv: vec![ConvSpec { filters: 16, kernel: 8 }, ConvSpec { filters: 32, kernel: 8 }],
            pool: vec![4],
            dense: vec![],
            loss: Loss::CrossEntropy,
            optimizer: Optimizer::Adam,
            lr: 0.005,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            threshold: 0.5,
            holdout: 0.2,
        }
    }
}

impl ClassifierConfig {
    /// Sequence length after each conv (and pooling) stage.
    pub fn stage_lengths(&self) -> Result<Vec<usize>, ClassifierError> {
        let bad = |m: String| ClassifierError::InvalidConfig(m);
        let mut len = self.input_length;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel > len {
                return Err(bad(format!("conv layer {i}: kernel {} longer than its input ({len})", c.kernel)));
            }
            len = len - c.kernel + 1;
            if let Some(&p) = self.pool.get(i) {
                len /= p;
                if len == 0 {
                    return Err(bad(format!("pool after conv layer {i} leaves no output")));
                }
            }
            out.push(len);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.input_length == 0 || self.channels == 0 {
            return bad("input_length and channels must be positive");
        }
        if self.conv.is_empty() {
            return bad("at least one conv layer is required");
        }
        if self.conv.iter().any(|c| c.filters == 0 || c.kernel == 0)
            || self.pool.contains(&0)
            || self.dense.contains(&0)
        {
            return bad("all widths must be positive");
        }
        if self.pool.len() + 1 != self.conv.len() {
            return bad("need one pool width per conv layer except the last");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad("holdout must be in [0, 1)");
        }
        self.stage_lengths().map(|_| ())
    }
}
