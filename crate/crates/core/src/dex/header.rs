use sha1::{Digest, Sha1};

use super::checksum::adler32;
use super::{read_u32, DexError};

pub const HEADER_SIZE: usize = 0x70;
pub const ENDIAN_CONSTANT: u32 = 0x1234_5678;
pub const REVERSE_ENDIAN_CONSTANT: u32 = 0x7856_3412;

/// The fixed 0x70-byte header at the start of every DEX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexHeader {
    pub magic: [u8; 8],
    /// Adler-32 of everything after this field.
    pub checksum: u32,
    /// SHA-1 of everything after this field.
    pub signature: [u8; 20],
    pub file_size: u32,
    pub header_size: u32,
    pub endian_tag: u32,
    pub link_size: u32,
    pub link_off: u32,
    pub map_off: u32,
    pub string_ids_size: u32,
    pub string_ids_off: u32,
    pub type_ids_size: u32,
    pub type_ids_off: u32,
    pub proto_ids_size: u32,
    pub proto_ids_off: u32,
    pub field_ids_size: u32,
    pub field_ids_off: u32,
    pub method_ids_size: u32,
    pub method_ids_off: u32,
    pub class_defs_size: u32,
    pub class_defs_off: u32,
    pub data_size: u32,
    pub data_off: u32,
}

impl DexHeader {
    /// Three-digit format version from the magic, e.g. `35` for "035".
    pub fn version(&self) -> u32 {
        self.magic[4..7]
            .iter()
            .fold(0, |acc, d| acc * 10 + (d - b'0') as u32)
    }
}

fn valid_magic(magic: &[u8; 8]) -> bool {
    &magic[..4] == b"dex\n" && magic[4..7].iter().all(u8::is_ascii_digit) && magic[7] == 0
}

/// Decodes and validates the header.
pub fn parse_header(bytes: &[u8]) -> Result<DexHeader, DexError> {
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TooShort {
            len: bytes.len(),
            need: HEADER_SIZE,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if !valid_magic(&magic) {
        return Err(DexError::BadMagic(magic));
    }
    let mut signature = [0u8; 20];
    signature.copy_from_slice(&bytes[12..32]);
    let u = |off: usize| read_u32(bytes, off).expect("within header");

    let endian_tag = u(0x28);
    if endian_tag != ENDIAN_CONSTANT {
        return Err(DexError::BadEndianTag(endian_tag));
    }
    let header_size = u(0x24);
    if header_size as usize != HEADER_SIZE {
        return Err(DexError::BadHeaderSize(header_size));
    }
    let file_size = u(0x20);
    if file_size as usize != bytes.len() {
        return Err(DexError::SizeMismatch {
            declared: file_size,
            actual: bytes.len(),
        });
    }

    Ok(DexHeader {
        magic,
        checksum: u(0x08),
        signature,
        file_size,
        header_size,
        endian_tag,
        link_size: u(0x2c),
        link_off: u(0x30),
        map_off: u(0x34),
        string_ids_size: u(0x38),
        string_ids_off: u(0x3c),
        type_ids_size: u(0x40),
        type_ids_off: u(0x44),
        proto_ids_size: u(0x48),
        proto_ids_off: u(0x4c),
        field_ids_size: u(0x50),
        field_ids_off: u(0x54),
        method_ids_size: u(0x58),
        method_ids_off: u(0x5c),
        class_defs_size: u(0x60),
        class_defs_off: u(0x64),
        data_size: u(0x68),
        data_off: u(0x6c),
    })
}

/// True iff the stored checksum equals adler32 over `bytes[12..]`.
pub fn verify_checksum(bytes: &[u8]) -> Result<bool, DexError> {
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TooShort {
            len: bytes.len(),
            need: HEADER_SIZE,
        });
    }
    let stored = read_u32(bytes, 8).expect("within header");
    Ok(adler32(&bytes[12..]) == stored)
}

/// True iff the stored SHA-1 signature equals the hash of `bytes[32..]`.
pub fn verify_signature(bytes: &[u8]) -> Result<bool, DexError> {
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TooShort {
            len: bytes.len(),
            need: HEADER_SIZE,
        });
    }
    let digest = Sha1::digest(&bytes[32..]);
    Ok(digest.as_slice() == &bytes[12..32])
}
