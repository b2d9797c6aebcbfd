//! Opcode embeddings for Android malware detection.
//!
//! The pipeline reads Dalvik bytecode out of APK/DEX files ([`apk`], [`dex`]),
//! turns each application into an opcode sequence ([`sequence`]), learns a
//! dense vector per opcode with a full-softmax skip-gram model
//! ([`corpus`], [`embedding`]), rewrites every sequence as a matrix of those
//! vectors ([`dataset`]), and trains a small 1-D CNN on the result
//! ([`classifier`]).

pub mod apk;
pub mod classifier;
pub mod corpus;
pub mod dataset;
pub mod dex;
pub mod embedding;
pub mod sequence;

use serde::{Deserialize, Serialize};

pub use sequence::{Label, OpcodeSequence};

/// What to do with an opcode byte that has no entry in the table (during
/// extraction) or no vector (during embedding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownOpcodePolicy {
    #[default]
    Error,
    Skip,
    MapToUnk,
}

impl std::str::FromStr for UnknownOpcodePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(Self::Error),
            "skip" => Ok(Self::Skip),
            "map-to-unk" => Ok(Self::MapToUnk),
            other => Err(format!("unknown policy `{other}` (expected error, skip or map-to-unk)")),
        }
    }
}
