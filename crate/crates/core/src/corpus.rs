//! Vocabulary construction and skip-gram pair generation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sequence::{self, Label, OpcodeSequence, SequenceError};

/// Number of one-hot positions in the full opcode table: byte values
/// `0x00..=0xfe`. `0xff` is reserved for the unknown-opcode sentinel.
pub const FULL_TABLE_SIZE: usize = 255;

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus contains no opcodes")]
    EmptyCorpus,
    #[error("vocabulary needs at least 2 opcodes, found {0}")]
    VocabularyTooSmall(usize),
    #[error("index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("{path}: {source}")]
    Sequence {
        path: PathBuf,
        #[source]
        source: SequenceError,
    },
    #[error("{path}: {field} mismatch (manifest {expected}, file {actual})")]
    Integrity {
        path: PathBuf,
        field: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabularyMode {
    /// Every slot of the opcode table, V = 255.
    #[default]
    FullTable,
    /// Only opcodes that occur in the corpus.
    Observed,
}

impl std::str::FromStr for VocabularyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-table" => Ok(Self::FullTable),
            "observed" => Ok(Self::Observed),
            other => Err(format!("unknown vocabulary mode `{other}` (expected full-table or observed)")),
        }
    }
}

/// Bijection between opcode bytes and `[0, V)`, assigned in ascending byte
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    opcodes: Vec<u8>,
    index: [Option<u16>; 256],
}

impl Vocabulary {
    /// Builds from a set of opcodes; order and duplicates do not matter.
    pub fn from_opcodes(ops: impl IntoIterator<Item = u8>) -> Result<Self, CorpusError> {
        let mut present = [false; 256];
        for op in ops {
            present[op as usize] = true;
        }
        let opcodes: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
        if opcodes.len() < 2 {
            return Err(CorpusError::VocabularyTooSmall(opcodes.len()));
        }
        let mut index = [None; 256];
        for (i, &op) in opcodes.iter().enumerate() {
            index[op as usize] = Some(i as u16);
        }
        Ok(Vocabulary { opcodes, index })
    }

    pub fn full_table() -> Self {
        Self::from_opcodes(0..FULL_TABLE_SIZE as u8).expect("255 opcodes")
    }

    pub fn len(&self) -> usize {
        self.opcodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opcodes.is_empty()
    }

    pub fn index_of(&self, opcode: u8) -> Option<usize> {
        self.index[opcode as usize].map(usize::from)
    }

    pub fn opcode_of(&self, index: usize) -> Option<u8> {
        self.opcodes.get(index).copied()
    }

    pub fn opcodes(&self) -> &[u8] {
        &self.opcodes
    }

    /// Maps a sequence to indices. Opcodes outside the vocabulary are
    /// dropped, so the tokens on either side of one become neighbours.
    pub fn encode(&self, opcodes: &[u8]) -> Vec<usize> {
        opcodes.iter().filter_map(|&op| self.index_of(op)).collect()
    }
}

pub fn build_vocabulary(sequences: &[OpcodeSequence], mode: VocabularyMode) -> Result<Vocabulary, CorpusError> {
    match mode {
        VocabularyMode::FullTable => Ok(Vocabulary::full_table()),
        VocabularyMode::Observed => {
            if sequences.iter().all(OpcodeSequence::is_empty) {
                return Err(CorpusError::EmptyCorpus);
            }
            Vocabulary::from_opcodes(sequences.iter().flat_map(|s| s.opcodes.iter().copied()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingPair {
    pub center: usize,
    pub context: usize,
}

/// (center, context) for every pair of positions at most `window` apart.
/// Position-major, contexts left to right.
pub fn window_pairs<T: Copy>(tokens: &[T], window: usize) -> Vec<(T, T)> {
    let n = tokens.len();
    let mut out = Vec::with_capacity(pair_count(n, window));
    for i in 0..n {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n.saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                out.push((tokens[i], tokens[j]));
            }
        }
    }
    out
}

pub fn generate_pairs(indices: &[usize], window: usize) -> Vec<TrainingPair> {
    window_pairs(indices, window)
        .into_iter()
        .map(|(center, context)| TrainingPair { center, context })
        .collect()
}

/// Closed form of `generate_pairs(..).len()` for a sequence of length `len`.
pub fn pair_count(len: usize, window: usize) -> usize {
    (0..len).map(|i| i.min(window) + (len - 1 - i).min(window)).sum()
}

/// Pairs for a whole corpus. Windows never cross sequence boundaries.
pub fn corpus_pairs(sequences: &[OpcodeSequence], vocab: &Vocabulary, window: usize) -> Vec<TrainingPair> {
    sequences
        .iter()
        .flat_map(|s| generate_pairs(&vocab.encode(&s.opcodes), window))
        .collect()
}

pub fn one_hot(index: usize, size: usize) -> Result<Vec<f64>, CorpusError> {
    if index >= size {
        return Err(CorpusError::IndexOutOfRange { index, size });
    }
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    Ok(v)
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CorpusError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let mut text = serde_json::to_string_pretty(entries).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The opcode sequences named by a manifest, loaded in manifest order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    pub sequences: Vec<OpcodeSequence>,
    pub total_tokens: usize,
}

impl CorpusFile {
    pub fn new(sequences: Vec<OpcodeSequence>) -> Self {
        let total_tokens = sequences.iter().map(OpcodeSequence::len).sum();
        CorpusFile {
            sequences,
            total_tokens,
        }
    }

    /// Loads every OPSQ file listed in the manifest. Relative paths resolve
    /// against the manifest's directory; recorded token counts and hashes
    /// are checked.
    pub fn load(manifest_path: &Path) -> Result<Self, CorpusError> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut sequences = Vec::new();
        for entry in read_manifest(manifest_path)? {
            let path = base.join(&entry.path);
            let bytes = fs::read(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            if let Some(expected) = &entry.sha256 {
                let actual = sha256_hex(&bytes);
                if !actual.eq_ignore_ascii_case(expected) {
                    return Err(CorpusError::Integrity {
                        path,
                        field: "sha256",
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
            let opcodes = sequence::decode_opsq(&bytes).map_err(|source| CorpusError::Sequence {
                path: path.clone(),
                source,
            })?;
            if let Some(expected) = entry.token_count {
                if expected != opcodes.len() as u64 {
                    return Err(CorpusError::Integrity {
                        path,
                        field: "token_count",
                        expected: expected.to_string(),
                        actual: opcodes.len().to_string(),
                    });
                }
            }
            let mut seq = OpcodeSequence::new(entry.path.display().to_string(), opcodes);
            seq.label = entry.label;
            sequences.push(seq);
        }
        Ok(CorpusFile::new(sequences))
    }
}
