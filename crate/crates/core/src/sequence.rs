//! Per-application opcode sequences and their on-disk forms.
//!
//! Binary (`.opsq`): `"OPSQ"`, u16 version (1), u32 count, then `count` opcode
//! bytes. Integers are little-endian.
//!
//! Text: one line per sequence, opcodes as space-separated two-digit
//! lowercase hex.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OPSQ_MAGIC: &[u8; 4] = b"OPSQ";
pub const OPSQ_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Benign = 0,
    Malicious = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Benign => Label::Malicious,
            Label::Malicious => Label::Benign,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malicious),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeSequence {
    pub source: String,
    pub opcodes: Vec<u8>,
    pub label: Option<Label>,
}

impl OpcodeSequence {
    pub fn new(source: impl Into<String>, opcodes: Vec<u8>) -> Self {
        OpcodeSequence {
            source: source.into(),
            opcodes,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.opcodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opcodes.is_empty()
    }

    /// Appends another sequence, as done for `classesN.dex` in ordinal order.
    pub fn extend(&mut self, other: &OpcodeSequence) {
        self.opcodes.extend_from_slice(&other.opcodes);
    }
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("bad magic {0:02x?}, expected \"OPSQ\"")]
    BadMagic([u8; 4]),
    #[error("unsupported OPSQ version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated OPSQ data: header declares {declared} opcodes, {available} present")]
    Truncated { declared: u32, available: usize },
    #[error("sequence of {0} opcodes does not fit a u32 count")]
    TooLong(usize),
    #[error("line {line}: bad hex token `{token}`")]
    BadHex { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_opsq(opcodes: &[u8]) -> Result<Vec<u8>, SequenceError> {
    let count = u32::try_from(opcodes.len()).map_err(|_| SequenceError::TooLong(opcodes.len()))?;
    let mut out = Vec::with_capacity(10 + opcodes.len());
    out.extend_from_slice(OPSQ_MAGIC);
    out.extend_from_slice(&OPSQ_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(opcodes);
    Ok(out)
}

pub fn decode_opsq(bytes: &[u8]) -> Result<Vec<u8>, SequenceError> {
    if bytes.len() < 4 {
        let mut magic = [0u8; 4];
        magic[..bytes.len()].copy_from_slice(bytes);
        return Err(SequenceError::BadMagic(magic));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != OPSQ_MAGIC {
        return Err(SequenceError::BadMagic(magic));
    }
    if bytes.len() < 10 {
        return Err(SequenceError::Truncated {
            declared: 0,
            available: 0,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != OPSQ_VERSION {
        return Err(SequenceError::UnsupportedVersion(version));
    }
    let declared = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let body = &bytes[10..];
    if body.len() != declared as usize {
        return Err(SequenceError::Truncated {
            declared,
            available: body.len(),
        });
    }
    Ok(body.to_vec())
}

pub fn write_opsq(path: &Path, opcodes: &[u8]) -> Result<(), SequenceError> {
    fs::write(path, encode_opsq(opcodes)?)?;
    Ok(())
}

pub fn read_opsq(path: &Path) -> Result<Vec<u8>, SequenceError> {
    decode_opsq(&fs::read(path)?)
}

/// `"0e 12 0f"` style rendering of one sequence.
pub fn to_hex_line(opcodes: &[u8]) -> String {
    let mut s = String::with_capacity(opcodes.len() * 3);
    for (i, op) in opcodes.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&format!("{op:02x}"));
    }
    s
}

pub fn parse_hex_lines(text: &str) -> Result<Vec<Vec<u8>>, SequenceError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| {
                    if tok.len() != 2 {
                        return Err(SequenceError::BadHex {
                            line: i + 1,
                            token: tok.to_string(),
                        });
                    }
                    u8::from_str_radix(tok, 16).map_err(|_| SequenceError::BadHex {
                        line: i + 1,
                        token: tok.to_string(),
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn opsq_layout() {
        let bytes = encode_opsq(&[0x00, 0x0e]).unwrap();
        assert_eq!(bytes, b"OPSQ\x01\x00\x02\x00\x00\x00\x00\x0e");
        assert!(matches!(decode_opsq(b"XXXX\x01\x00\0\0\0\0"), Err(SequenceError::BadMagic(_))));
        assert!(matches!(
            decode_opsq(b"OPSQ\x02\x00\0\0\0\0"),
            Err(SequenceError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            decode_opsq(&bytes[..11]),
            Err(SequenceError::Truncated { declared: 2, available: 1 })
        ));
    }

    #[test]
    fn hex_text() {
        assert_eq!(to_hex_line(&[0x0e, 0x12, 0xff]), "0e 12 ff");
        assert_eq!(parse_hex_lines("0e 12\n\n6e").unwrap(), vec![vec![0x0e, 0x12], vec![], vec![0x6e]]);
        assert!(matches!(parse_hex_lines("0e zz"), Err(SequenceError::BadHex { line: 1, .. })));
    }

    #[test]
    fn labels_only_zero_or_one() {
        assert_eq!(serde_json::to_string(&Label::Malicious).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Benign);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }

    proptest! {
        #[test]
        fn opsq_roundtrip(ops in proptest::collection::vec(any::<u8>(), 0..512)) {
            prop_assert_eq!(decode_opsq(&encode_opsq(&ops).unwrap()).unwrap(), ops.clone());
            let line = to_hex_line(&ops);
            let parsed = parse_hex_lines(&line).unwrap();
            let expect = if ops.is_empty() { Vec::<Vec<u8>>::new() } else { vec![ops] };
            prop_assert_eq!(parsed, expect);
        }
    }
}
