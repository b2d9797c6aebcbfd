//! DEX container parsing and opcode extraction.
//!
//! Only the parts of the format needed to reach every method body are
//! decoded: the header, string/type/method ids for naming, class definitions,
//! `class_data_item`s and `code_item`s. Instructions are stepped through with
//! the width table in [`opcodes`]; operands are never interpreted.

pub mod checksum;
pub mod header;
pub mod insn;
pub mod leb128;
pub mod opcodes;

use thiserror::Error;

use crate::sequence::OpcodeSequence;
use crate::UnknownOpcodePolicy;

pub use header::{parse_header, verify_checksum, verify_signature, DexHeader, HEADER_SIZE};
pub use insn::{decode_instruction, walk_code_item, walk_code_item_with, Instruction};
use leb128::read_uleb128;

#[derive(Debug, Error)]
pub enum DexError {
    #[error("buffer too short: {len} bytes, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 8]),
    #[error("bad endian tag {0:#010x}")]
    BadEndianTag(u32),
    #[error("header_size is {0:#x}, expected 0x70")]
    BadHeaderSize(u32),
    #[error("file_size {declared} does not match buffer length {actual}")]
    SizeMismatch { declared: u32, actual: usize },
    #[error("checksum mismatch: header says {stored:#010x}, data hashes to {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("SHA-1 signature mismatch")]
    SignatureMismatch,
    #[error("undefined opcode {opcode:#04x} at code unit {offset}")]
    UndefinedOpcode { opcode: u8, offset: usize },
    #[error("{mnemonic} at code unit {offset} needs {width} units but only {remaining} remain")]
    TruncatedInstruction {
        mnemonic: &'static str,
        offset: usize,
        width: usize,
        remaining: usize,
    },
    #[error("{what} at {offset:#x} is out of bounds")]
    OutOfBounds { what: &'static str, offset: usize },
    #[error("malformed uleb128 at {0:#x}")]
    BadLeb128(usize),
    #[error("code item at {0:#x} is not 4-byte aligned")]
    Misaligned(u32),
    #[error("in {method} (code_item {code_off:#x}): {source}")]
    InMethod {
        method: String,
        code_off: u32,
        #[source]
        source: Box<DexError>,
    },
}

pub(crate) fn read_u16(bytes: &[u8], off: usize) -> Option<u16> {
    let b = bytes.get(off..off.checked_add(2)?)?;
    Some(u16::from_le_bytes([b[0], b[1]]))
}

pub(crate) fn read_u32(bytes: &[u8], off: usize) -> Option<u32> {
    let b = bytes.get(off..off.checked_add(4)?)?;
    Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn u16_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u16, DexError> {
    read_u16(bytes, off).ok_or(DexError::OutOfBounds { what, offset: off })
}

fn u32_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u32, DexError> {
    read_u32(bytes, off).ok_or(DexError::OutOfBounds { what, offset: off })
}

/// One method body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeItem<'a> {
    pub method_name: String,
    pub registers_size: u16,
    pub ins_size: u16,
    pub outs_size: u16,
    pub tries_size: u16,
    /// Length of `insns` in 16-bit code units.
    pub insns_size: u32,
    pub insns: &'a [u8],
    /// File offset of the `code_item`.
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassDef {
    pub class_idx: u32,
    pub access_flags: u32,
    pub superclass_idx: u32,
    pub interfaces_off: u32,
    pub source_file_idx: u32,
    pub annotations_off: u32,
    pub class_data_off: u32,
    pub static_values_off: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedMethod {
    pub method_idx: u32,
    pub access_flags: u32,
    pub code_off: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassData {
    pub direct_methods: Vec<EncodedMethod>,
    pub virtual_methods: Vec<EncodedMethod>,
}

/// A parsed DEX buffer. Sections are decoded lazily from the borrowed bytes.
#[derive(Debug, Clone)]
pub struct DexFile<'a> {
    bytes: &'a [u8],
    header: DexHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    pub unknown_opcodes: UnknownOpcodePolicy,
    pub verify_checksum: bool,
    pub verify_signature: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            unknown_opcodes: UnknownOpcodePolicy::Error,
            verify_checksum: true,
            verify_signature: false,
        }
    }
}

impl<'a> DexFile<'a> {
    /// Parses the header only; section tables are read on demand.
    pub fn parse(bytes: &'a [u8]) -> Result<Self, DexError> {
        let header = parse_header(bytes)?;
        Ok(DexFile { bytes, header })
    }

    /// Parses and runs the integrity checks selected in `opts`.
    pub fn open(bytes: &'a [u8], opts: &ExtractOptions) -> Result<Self, DexError> {
        let dex = Self::parse(bytes)?;
        if opts.verify_checksum && !verify_checksum(bytes)? {
            return Err(DexError::ChecksumMismatch {
                stored: dex.header.checksum,
                computed: checksum::adler32(&bytes[12..]),
            });
        }
        if opts.verify_signature && !verify_signature(bytes)? {
            return Err(DexError::SignatureMismatch);
        }
        Ok(dex)
    }

    pub fn header(&self) -> &DexHeader {
        &self.header
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    /// Reads string `idx` from `string_ids`. MUTF-8 is decoded as UTF-8,
    /// lossily; this is only used for diagnostics.
    pub fn string(&self, idx: u32) -> Result<String, DexError> {
        if idx >= self.header.string_ids_size {
            return Err(DexError::OutOfBounds {
                what: "string index",
                offset: idx as usize,
            });
        }
        let id_off = self.header.string_ids_off as usize + 4 * idx as usize;
        let data_off = u32_at(self.bytes, id_off, "string_id")? as usize;
        let (_utf16_len, n) = read_uleb128(self.bytes, data_off).ok_or(DexError::BadLeb128(data_off))?;
        let start = data_off + n;
        let tail = self.bytes.get(start..).ok_or(DexError::OutOfBounds {
            what: "string_data",
            offset: start,
        })?;
        let end = tail.iter().position(|&b| b == 0).ok_or(DexError::OutOfBounds {
            what: "string_data terminator",
            offset: start,
        })?;
        Ok(String::from_utf8_lossy(&tail[..end]).into_owned())
    }

    pub fn type_descriptor(&self, idx: u32) -> Result<String, DexError> {
        if idx >= self.header.type_ids_size {
            return Err(DexError::OutOfBounds {
                what: "type index",
                offset: idx as usize,
            });
        }
        let off = self.header.type_ids_off as usize + 4 * idx as usize;
        self.string(u32_at(self.bytes, off, "type_id")?)
    }

    /// `Lpkg/Class;->name` for a `method_ids` entry.
    pub fn method_name(&self, idx: u32) -> Result<String, DexError> {
        if idx >= self.header.method_ids_size {
            return Err(DexError::OutOfBounds {
                what: "method index",
                offset: idx as usize,
            });
        }
        let off = self.header.method_ids_off as usize + 8 * idx as usize;
        let class_idx = u16_at(self.bytes, off, "method_id")?;
        let name_idx = u32_at(self.bytes, off + 4, "method_id")?;
        Ok(format!("{}->{}", self.type_descriptor(class_idx as u32)?, self.string(name_idx)?))
    }

    pub fn class_defs(&self) -> Result<Vec<ClassDef>, DexError> {
        let base = self.header.class_defs_off as usize;
        (0..self.header.class_defs_size as usize)
            .map(|i| {
                let off = base + 32 * i;
                let f = |k: usize| u32_at(self.bytes, off + 4 * k, "class_def");
                Ok(ClassDef {
                    class_idx: f(0)?,
                    access_flags: f(1)?,
                    superclass_idx: f(2)?,
                    interfaces_off: f(3)?,
                    source_file_idx: f(4)?,
                    annotations_off: f(5)?,
                    class_data_off: f(6)?,
                    static_values_off: f(7)?,
                })
            })
            .collect()
    }

    pub fn class_data(&self, off: u32) -> Result<ClassData, DexError> {
        let mut pos = off as usize;
        let mut uleb = || -> Result<u32, DexError> {
            let (v, n) = read_uleb128(self.bytes, pos).ok_or(DexError::BadLeb128(pos))?;
            pos += n;
            Ok(v)
        };
        let static_fields = uleb()?;
        let instance_fields = uleb()?;
        let direct = uleb()?;
        let virtual_ = uleb()?;
        for _ in 0..(static_fields as u64 + instance_fields as u64) {
            uleb()?; // field_idx_diff
            uleb()?; // access_flags
        }
        let mut methods = |count: u32| -> Result<Vec<EncodedMethod>, DexError> {
            let mut idx: u32 = 0;
            let mut out = Vec::with_capacity(count.min(4096) as usize);
            for _ in 0..count {
                idx = idx.wrapping_add(uleb()?);
                out.push(EncodedMethod {
                    method_idx: idx,
                    access_flags: uleb()?,
                    code_off: uleb()?,
                });
            }
            Ok(out)
        };
        let direct_methods = methods(direct)?;
        let virtual_methods = methods(virtual_)?;
        Ok(ClassData {
            direct_methods,
            virtual_methods,
        })
    }

    pub fn code_item(&self, off: u32, method_name: String) -> Result<CodeItem<'a>, DexError> {
        if off % 4 != 0 {
            return Err(DexError::Misaligned(off));
        }
        let o = off as usize;
        let insns_size = u32_at(self.bytes, o + 12, "code_item")?;
        let start = o + 16;
        let len = 2 * insns_size as usize;
        let insns = start
            .checked_add(len)
            .and_then(|end| self.bytes.get(start..end))
            .ok_or(DexError::OutOfBounds {
                what: "insns",
                offset: start,
            })?;
        Ok(CodeItem {
            method_name,
            registers_size: u16_at(self.bytes, o, "code_item")?,
            ins_size: u16_at(self.bytes, o + 2, "code_item")?,
            outs_size: u16_at(self.bytes, o + 4, "code_item")?,
            tries_size: u16_at(self.bytes, o + 6, "code_item")?,
            insns_size,
            insns,
            offset: off,
        })
    }

    /// Every method body in extraction order: class_defs in file order, and
    /// within each class the direct methods followed by the virtual methods.
    /// Abstract and native methods (code_off 0) are skipped.
    pub fn code_items(&self) -> Result<Vec<CodeItem<'a>>, DexError> {
        let mut out = Vec::new();
        for class in self.class_defs()? {
            if class.class_data_off == 0 {
                continue;
            }
            let data = self.class_data(class.class_data_off)?;
            for m in data.direct_methods.iter().chain(&data.virtual_methods) {
                if m.code_off == 0 {
                    continue;
                }
                let name = self
                    .method_name(m.method_idx)
                    .unwrap_or_else(|_| format!("method@{}", m.method_idx));
                out.push(self.code_item(m.code_off, name)?);
            }
        }
        Ok(out)
    }

    /// Opcode bytes of every non-payload instruction of every method.
    pub fn opcodes(&self, policy: UnknownOpcodePolicy) -> Result<Vec<u8>, DexError> {
        let mut out = Vec::new();
        for item in self.code_items()? {
            for insn in walk_code_item_with(&item, policy)? {
                if insn.is_payload {
                    continue;
                }
                if insn.is_undefined {
                    match policy {
                        UnknownOpcodePolicy::Skip => continue,
                        UnknownOpcodePolicy::MapToUnk => {
                            out.push(opcodes::UNK_OPCODE);
                            continue;
                        }
                        UnknownOpcodePolicy::Error => unreachable!("walker rejects undefined opcodes"),
                    }
                }
                out.push(insn.opcode);
            }
        }
        Ok(out)
    }
}

/// Extracts the opcode sequence of one DEX buffer.
pub fn extract_opcode_sequence(
    bytes: &[u8],
    source: impl Into<String>,
    opts: &ExtractOptions,
) -> Result<OpcodeSequence, DexError> {
    let dex = DexFile::open(bytes, opts)?;
    Ok(OpcodeSequence::new(source, dex.opcodes(opts.unknown_opcodes)?))
}
