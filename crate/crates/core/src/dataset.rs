//! Embedded dataset: every opcode of every program replaced by its vector.
//!
//! Container layout, little-endian throughout:
//!
//! ```text
//! "OP2V"  u16 version (1)  u32 V  u32 D
//! V x (u8 opcode, D x f32)                 embedding table snapshot
//! u32 record_count
//! record_count x (u8 label, u32 L, L*D x f32 row-major, [u8; 32] sha256)
//! ```
//!
//! The hash of each record covers its label byte, length and row data.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dex::opcodes::UNK_OPCODE;
use crate::embedding::table::{read_records, write_records};
use crate::embedding::{EmbeddingError, EmbeddingTable};
use crate::sequence::{Label, OpcodeSequence};
use crate::UnknownOpcodePolicy;

pub const OP2V_MAGIC: &[u8; 4] = b"OP2V";
pub const OP2V_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{source_name}: opcode {opcode:#04x} at position {position} has no embedding")]
    UnknownOpcode {
        source_name: String,
        opcode: u8,
        position: usize,
    },
    #[error("{0}: sequence has no label")]
    MissingLabel(String),
    #[error("record {index} has dimension {found}, dataset uses {expected}")]
    DimensionMismatch { index: usize, found: usize, expected: usize },
    #[error("bad magic {0:02x?}, expected \"OP2V\"")]
    BadMagic([u8; 4]),
    #[error("unsupported OP2V version {0}")]
    UnsupportedVersion(u16),
    #[error("file ends inside {0}")]
    TruncatedFile(&'static str),
    #[error("record {0}: label byte must be 0 or 1, found {1}")]
    BadLabel(usize, u8),
    #[error("record {0}: sha256 does not match its payload")]
    HashMismatch(usize),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("embedding snapshot: {0}")]
    Table(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One labeled program as an L x D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedProgram {
    pub label: Label,
    pub dim: usize,
    /// Row-major, `rows() * dim` values.
    pub data: Vec<f32>,
    pub source: String,
}

impl EmbeddedProgram {
    pub fn new(label: Label, dim: usize, data: Vec<f32>, source: impl Into<String>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data is not a whole number of rows");
        EmbeddedProgram {
            label,
            dim,
            data,
            source: source.into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Same label and matrix; `source` is not part of the container.
    pub fn same_content(&self, other: &EmbeddedProgram) -> bool {
        self.label == other.label && self.dim == other.dim && self.data == other.data
    }
}

/// Replaces each opcode with its table vector. Under `MapToUnk`, opcodes
/// without a vector take the table's entry for the unknown sentinel, or a
/// zero row if the table has none; under `Skip` they are dropped.
pub fn embed_sequence(
    seq: &OpcodeSequence,
    table: &EmbeddingTable,
    policy: UnknownOpcodePolicy,
) -> Result<EmbeddedProgram, DatasetError> {
    let label = seq.label.ok_or_else(|| DatasetError::MissingLabel(seq.source.clone()))?;
    let dim = table.dim();
    let zero = vec![0.0f32; dim];
    let mut data = Vec::with_capacity(seq.len() * dim);
    for (position, &op) in seq.opcodes.iter().enumerate() {
        match (table.get(op), policy) {
            (Some(v), _) => data.extend_from_slice(v),
            (None, UnknownOpcodePolicy::Skip) => {}
            (None, UnknownOpcodePolicy::MapToUnk) => {
                data.extend_from_slice(table.get(UNK_OPCODE).unwrap_or(&zero));
            }
            (None, UnknownOpcodePolicy::Error) => {
                return Err(DatasetError::UnknownOpcode {
                    source_name: seq.source.clone(),
                    opcode: op,
                    position,
                })
            }
        }
    }
    Ok(EmbeddedProgram {
        label,
        dim,
        data,
        source: seq.source.clone(),
    })
}

/// A dataset file's contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub table: EmbeddingTable,
    pub records: Vec<EmbeddedProgram>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.table.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSummary {
    pub path: PathBuf,
    pub record_count: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub bytes: usize,
}

fn record_payload(out: &mut Vec<u8>, rec: &EmbeddedProgram) {
    out.push(rec.label.as_u8());
    out.extend_from_slice(&(rec.rows() as u32).to_le_bytes());
    for x in &rec.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_dataset(table: &EmbeddingTable, records: &[EmbeddedProgram]) -> Result<Vec<u8>, DatasetError> {
    let dim = table.dim();
    if let Some((index, r)) = records.iter().enumerate().find(|(_, r)| r.dim != dim) {
        return Err(DatasetError::DimensionMismatch {
            index,
            found: r.dim,
            expected: dim,
        });
    }
    let mut out = Vec::new();
    out.extend_from_slice(OP2V_MAGIC);
    out.extend_from_slice(&OP2V_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    write_records(&mut out, table);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        let start = out.len();
        record_payload(&mut out, rec);
        let digest = Sha256::digest(&out[start..]);
        out.extend_from_slice(&digest);
    }
    Ok(out)
}

/// Writes the container and syncs it to disk before returning.
pub fn write_dataset(
    path: &Path,
    table: &EmbeddingTable,
    records: &[EmbeddedProgram],
) -> Result<DatasetSummary, DatasetError> {
    let bytes = encode_dataset(table, records)?;
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    Ok(DatasetSummary {
        path: path.to_path_buf(),
        record_count: records.len(),
        vocab_size: table.len(),
        dim: table.dim(),
        bytes: bytes.len(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).ok_or(DatasetError::TruncatedFile(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(DatasetError::TruncatedFile(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8], source: &str) -> Result<Dataset, DatasetError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "header")?.try_into().unwrap();
    if &magic != OP2V_MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(cur.take(2, "header")?.try_into().unwrap());
    if version != OP2V_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let v = cur.u32("header")? as usize;
    let dim = cur.u32("header")? as usize;
    if dim == 0 {
        return Err(EmbeddingError::Malformed("dimension 0".into()).into());
    }
    let (table, used) = match read_records(&bytes[cur.pos..], v, dim) {
        Err(EmbeddingError::Truncated) => return Err(DatasetError::TruncatedFile("embedding snapshot")),
        other => other?,
    };
    cur.pos += used;

    let count = cur.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let start = cur.pos;
        let label_byte = cur.take(1, "record")?[0];
        let rows = cur.u32("record")? as usize;
        let n = rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or(DatasetError::TruncatedFile("record"))?;
        let raw = cur.take(n, "record")?;
        let payload = &bytes[start..cur.pos];
        let digest = cur.take(32, "record hash")?;
        if Sha256::digest(payload).as_slice() != digest {
            return Err(DatasetError::HashMismatch(index));
        }
        let label = Label::try_from(label_byte).map_err(|_| DatasetError::BadLabel(index, label_byte))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(EmbeddedProgram {
            label,
            dim,
            data,
            source: format!("{source}#{index}"),
        });
    }
    if cur.pos != bytes.len() {
        return Err(DatasetError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(Dataset { table, records })
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_dataset(&bytes, &path.display().to_string())
}

/// True when every row of every record is some table vector.
pub fn check_referential_integrity(dataset: &Dataset) -> bool {
    let vectors: Vec<&[f32]> = dataset.table.iter().map(|(_, v)| v).collect();
    dataset
        .records
        .iter()
        .all(|r| (0..r.rows()).all(|i| vectors.contains(&r.row(i))))
}
