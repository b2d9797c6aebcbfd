use std::fs;
use std::path::Path;

use super::{EmbeddingError, EmbeddingModel};
use crate::corpus::Vocabulary;
use crate::dex::opcodes;

pub const O2VT_MAGIC: &[u8; 4] = b"O2VT";
pub const O2VT_VERSION: u16 = 1;

/// Learned vector for each vocabulary opcode, stored as f32 and kept in
/// ascending opcode order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: Vec<(u8, Vec<f32>)>,
    index: [Option<u16>; 256],
}

impl EmbeddingTable {
    pub fn new(dim: usize, mut entries: Vec<(u8, Vec<f32>)>) -> Result<Self, EmbeddingError> {
        entries.sort_by_key(|(op, _)| *op);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(EmbeddingError::Malformed("duplicate opcode".into()));
        }
        if let Some((_, v)) = entries.iter().find(|(_, v)| v.len() != dim) {
            return Err(EmbeddingError::LengthMismatch(v.len(), dim));
        }
        if entries.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(EmbeddingError::Malformed("non-finite component".into()));
        }
        let mut index = [None; 256];
        for (i, (op, _)) in entries.iter().enumerate() {
            index[*op as usize] = Some(i as u16);
        }
        Ok(EmbeddingTable { dim, entries, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, opcode: u8) -> Option<&[f32]> {
        self.index[opcode as usize].map(|i| self.entries[i as usize].1.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, &[f32])> {
        self.entries.iter().map(|(op, v)| (*op, v.as_slice()))
    }

    pub fn opcodes(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|(op, _)| *op)
    }
}

/// Splits `w_in` into one vector per vocabulary opcode.
pub fn embeddings(model: &EmbeddingModel, vocab: &Vocabulary) -> EmbeddingTable {
    assert_eq!(model.vocab_size, vocab.len(), "model and vocabulary disagree on V");
    let entries = (0..vocab.len())
        .map(|i| {
            let op = vocab.opcode_of(i).expect("index below V");
            (op, model.input_row(i).iter().map(|&x| x as f32).collect())
        })
        .collect();
    EmbeddingTable::new(model.dim, entries).expect("model rows are well-formed")
}

pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// The `k` opcodes most similar to `opcode`, by descending cosine
/// similarity; ties go to the lower opcode byte.
pub fn nearest(table: &EmbeddingTable, opcode: u8, k: usize) -> Result<Vec<(u8, f64)>, EmbeddingError> {
    let query = table.get(opcode).ok_or(EmbeddingError::UnknownOpcode(opcode))?;
    if k == 0 || k >= table.len() {
        return Err(EmbeddingError::InvalidK { k, limit: table.len() });
    }
    let mut scored = table
        .iter()
        .filter(|(op, _)| *op != opcode)
        .map(|(op, v)| cosine_similarity(query, v).map(|s| (op, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// `"O2VT"`, u16 version, u32 V, u32 D, then V records of (u8 opcode,
/// D x f32). Little-endian throughout.
pub fn encode_table(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + table.len() * (1 + 4 * table.dim()));
    out.extend_from_slice(O2VT_MAGIC);
    out.extend_from_slice(&O2VT_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    write_records(&mut out, table);
    out
}

/// Appends the (opcode, vector) records without any header. Shared with the
/// dataset container, which embeds a snapshot of the table.
pub(crate) fn write_records(out: &mut Vec<u8>, table: &EmbeddingTable) {
    for (op, v) in table.iter() {
        out.push(op);
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Reads `count` records of dimension `dim` from the front of `bytes`,
/// returning the table and the number of bytes consumed.
pub(crate) fn read_records(bytes: &[u8], count: usize, dim: usize) -> Result<(EmbeddingTable, usize), EmbeddingError> {
    let rec = 1 + 4 * dim;
    let need = count.checked_mul(rec).ok_or(EmbeddingError::Truncated)?;
    if bytes.len() < need {
        return Err(EmbeddingError::Truncated);
    }
    let entries = bytes[..need]
        .chunks_exact(rec)
        .map(|r| {
            let v = r[1..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            (r[0], v)
        })
        .collect();
    Ok((EmbeddingTable::new(dim, entries)?, need))
}

pub fn decode_table(bytes: &[u8]) -> Result<EmbeddingTable, EmbeddingError> {
    if bytes.len() < 4 {
        return Err(EmbeddingError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != O2VT_MAGIC {
        return Err(EmbeddingError::BadMagic(magic));
    }
    if bytes.len() < 14 {
        return Err(EmbeddingError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != O2VT_VERSION {
        return Err(EmbeddingError::UnsupportedVersion(version));
    }
    let v = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let (table, used) = read_records(&bytes[14..], v, d)?;
    if 14 + used != bytes.len() {
        return Err(EmbeddingError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - 14 - used
        )));
    }
    Ok(table)
}

pub fn write_table(path: &Path, table: &EmbeddingTable) -> Result<(), EmbeddingError> {
    fs::write(path, encode_table(table)).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_table(path: &Path) -> Result<EmbeddingTable, EmbeddingError> {
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_table(&bytes)
}

/// word2vec-style text: `"V D"`, then `"<mnemonic> v1 ... vD"` per opcode.
pub fn write_text_table(path: &Path, table: &EmbeddingTable) -> Result<(), EmbeddingError> {
    let mut s = format!("{} {}\n", table.len(), table.dim());
    for (op, v) in table.iter() {
        s.push_str(opcodes::mnemonic(op));
        for x in v {
            s.push_str(&format!(" {x}"));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text_table(text: &str) -> Result<EmbeddingTable, EmbeddingError> {
    let bad = |m: String| EmbeddingError::Malformed(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad header `{header}`"))))
        .collect::<Result<_, _>>()?;
    let [v, d] = dims[..] else {
        return Err(bad(format!("bad header `{header}`")));
    };
    let mut entries = Vec::with_capacity(v);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut toks = line.split_whitespace();
        let name = toks.next().expect("non-empty line");
        let op = opcodes::by_mnemonic(name).ok_or_else(|| bad(format!("unknown mnemonic `{name}`")))?;
        let vec = toks
            .map(|t| t.parse::<f32>().map_err(|_| bad(format!("bad number `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push((op, vec));
    }
    if entries.len() != v {
        return Err(bad(format!("header says {v} entries, found {}", entries.len())));
    }
    EmbeddingTable::new(d, entries)
}
