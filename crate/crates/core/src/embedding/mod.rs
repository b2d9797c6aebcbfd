//! Skip-gram opcode embeddings.

mod model;
pub(crate) mod table;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use model::{
    init_model, learning_rate, softmax, train, train_parallel, EmbeddingModel, TrainConfig, TrainTrace,
};
pub use table::{
    cosine_similarity, decode_table, embeddings, encode_table, nearest, read_table, read_text_table,
    write_table, write_text_table, EmbeddingTable, O2VT_MAGIC, O2VT_VERSION,
};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no training pairs")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("vectors have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("opcode {0:#04x} is not in the embedding table")]
    UnknownOpcode(u8),
    #[error("k = {k} must be in 1..{limit}")]
    InvalidK { k: usize, limit: usize },
    #[error("bad magic {0:02x?}, expected \"O2VT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported O2VT version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated embedding table")]
    Truncated,
    #[error("malformed embedding table: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
