use super::opcodes;
use super::{CodeItem, DexError};
use crate::UnknownOpcodePolicy;

pub const PACKED_SWITCH_PAYLOAD: u16 = 0x0100;
pub const SPARSE_SWITCH_PAYLOAD: u16 = 0x0200;
pub const FILL_ARRAY_DATA_PAYLOAD: u16 = 0x0300;

/// One decoded instruction (or payload pseudo-instruction). Operands are not
/// decoded; only what is needed to step through the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: u8,
    pub mnemonic: &'static str,
    /// Width in 16-bit code units.
    pub width: usize,
    pub is_payload: bool,
    /// Set when the opcode byte is not in the table and the walker was told
    /// to keep going; the width is then assumed to be one unit.
    pub is_undefined: bool,
}

fn unit_at(code: &[u8], index: usize) -> Option<u16> {
    let b = code.get(2 * index..2 * index + 2)?;
    Some(u16::from_le_bytes([b[0], b[1]]))
}

/// Decodes the instruction starting at code-unit `offset` of a little-endian
/// instruction buffer.
pub fn decode_instruction(code: &[u8], offset: usize) -> Result<Instruction, DexError> {
    let total = code.len() / 2;
    let first = unit_at(code, offset).ok_or(DexError::OutOfBounds {
        what: "instruction",
        offset,
    })?;
    let remaining = total - offset;
    let opcode = (first & 0xff) as u8;

    if opcode == 0x00 && matches!(first, PACKED_SWITCH_PAYLOAD | SPARSE_SWITCH_PAYLOAD | FILL_ARRAY_DATA_PAYLOAD) {
        return decode_payload(code, offset, first, remaining);
    }

    let info = opcodes::info(opcode);
    let width = info.width().ok_or(DexError::UndefinedOpcode { opcode, offset })?;
    if width > remaining {
        return Err(DexError::TruncatedInstruction {
            mnemonic: info.mnemonic,
            offset,
            width,
            remaining,
        });
    }
    Ok(Instruction {
        opcode,
        mnemonic: info.mnemonic,
        width,
        is_payload: false,
        is_undefined: false,
    })
}

fn decode_payload(code: &[u8], offset: usize, ident: u16, remaining: usize) -> Result<Instruction, DexError> {
    let (mnemonic, header_units) = match ident {
        PACKED_SWITCH_PAYLOAD => ("packed-switch-payload", 2),
        SPARSE_SWITCH_PAYLOAD => ("sparse-switch-payload", 2),
        _ => ("fill-array-data-payload", 4),
    };
    let truncated = |width| DexError::TruncatedInstruction {
        mnemonic,
        offset,
        width,
        remaining,
    };
    if remaining < header_units {
        return Err(truncated(header_units));
    }
    let size = unit_at(code, offset + 1).expect("checked") as usize;
    let width = match ident {
        // ident, size, first_key (2), targets (2 each)
        PACKED_SWITCH_PAYLOAD => 4 + 2 * size,
        // ident, size, keys (2 each), targets (2 each)
        SPARSE_SWITCH_PAYLOAD => 2 + 4 * size,
        // ident, element_width, size (2), data padded to whole units
        _ => {
            let element_width = size;
            let lo = unit_at(code, offset + 2).expect("checked") as usize;
            let hi = unit_at(code, offset + 3).expect("checked") as usize;
            let count = lo | (hi << 16);
            4 + (count * element_width).div_ceil(2)
        }
    };
    if width > remaining {
        return Err(truncated(width));
    }
    Ok(Instruction {
        opcode: 0x00,
        mnemonic,
        width,
        is_payload: true,
        is_undefined: false,
    })
}

/// Decodes a method body front to back, failing on the first undefined
/// opcode.
pub fn walk_code_item(item: &CodeItem<'_>) -> Result<Vec<Instruction>, DexError> {
    walk_code_item_with(item, UnknownOpcodePolicy::Error)
}

/// Like [`walk_code_item`], but undefined opcodes are returned as one-unit
/// instructions flagged `is_undefined` unless the policy is `Error`.
pub fn walk_code_item_with(item: &CodeItem<'_>, policy: UnknownOpcodePolicy) -> Result<Vec<Instruction>, DexError> {
    let total = item.insns_size as usize;
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < total {
        let insn = match decode_instruction(item.insns, pc) {
            Ok(insn) => insn,
            Err(DexError::UndefinedOpcode { opcode, .. }) if policy != UnknownOpcodePolicy::Error => Instruction {
                opcode,
                mnemonic: opcodes::mnemonic(opcode),
                width: 1,
                is_payload: false,
                is_undefined: true,
            },
            Err(e) => {
                return Err(DexError::InMethod {
                    method: item.method_name.clone(),
                    code_off: item.offset,
                    source: Box::new(e),
                })
            }
        };
        pc += insn.width;
        out.push(insn);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(words: &[u16]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    fn item(code: &[u8]) -> CodeItem<'_> {
        CodeItem {
            method_name: "LTest;->m".into(),
            registers_size: 2,
            ins_size: 0,
            outs_size: 0,
            tries_size: 0,
            insns_size: (code.len() / 2) as u32,
            insns: code,
            offset: 0x100,
        }
    }

    #[test]
    fn nop_and_return_void() {
        let code = units(&[0x0000, 0x000e]);
        let nop = decode_instruction(&code, 0).unwrap();
        assert_eq!((nop.opcode, nop.mnemonic, nop.width, nop.is_payload), (0x00, "nop", 1, false));
        let ret = decode_instruction(&code, 1).unwrap();
        assert_eq!((ret.opcode, ret.mnemonic, ret.width), (0x0e, "return-void", 1));
    }

    #[test]
    fn packed_switch_payload_size_three() {
        // ident, size=3, first_key lo/hi, 3 targets of two units each
        let code = units(&[0x0100, 3, 0, 0, 1, 0, 2, 0, 3, 0]);
        let p = decode_instruction(&code, 0).unwrap();
        assert!(p.is_payload);
        assert_eq!(p.opcode, 0x00);
        assert_eq!(p.width, 10);
    }

    #[test]
    fn sparse_switch_and_fill_array_payloads() {
        let code = units(&[0x0200, 2, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode_instruction(&code, 0).unwrap().width, 10);
        // element_width 1, 3 elements -> 2 data units (padded)
        let code = units(&[0x0300, 1, 3, 0, 0x0201, 0x0003]);
        let p = decode_instruction(&code, 0).unwrap();
        assert_eq!((p.width, p.mnemonic), (6, "fill-array-data-payload"));
        // element_width 4, 2 elements -> 4 data units
        let code = units(&[0x0300, 4, 2, 0, 0, 0, 0, 0]);
        assert_eq!(decode_instruction(&code, 0).unwrap().width, 8);
    }

    #[test]
    fn undefined_and_truncated() {
        let code = units(&[0x003e]);
        assert!(matches!(
            decode_instruction(&code, 0),
            Err(DexError::UndefinedOpcode { opcode: 0x3e, offset: 0 })
        ));
        // const-wide needs five units
        let code = units(&[0x0018, 0, 0]);
        assert!(matches!(
            decode_instruction(&code, 0),
            Err(DexError::TruncatedInstruction { width: 5, remaining: 3, .. })
        ));
        let code = units(&[0x0100, 5, 0, 0]);
        assert!(matches!(
            decode_instruction(&code, 0),
            Err(DexError::TruncatedInstruction { width: 14, .. })
        ));
    }

    #[test]
    fn walk_small_methods() {
        let code = units(&[0x000e]);
        let insns = walk_code_item(&item(&code)).unwrap();
        assert_eq!(insns.len(), 1);
        assert_eq!(insns[0].width, 1);

        // const/4 v0, #0 ; return v0
        let code = units(&[0x0012, 0x000f]);
        let insns = walk_code_item(&item(&code)).unwrap();
        assert_eq!(insns.iter().map(|i| i.width).collect::<Vec<_>>(), vec![1, 1]);
        assert_eq!(insns[0].mnemonic, "const/4");

        assert!(walk_code_item(&item(&[])).unwrap().is_empty());
    }

    #[test]
    fn walk_reports_method_context() {
        let code = units(&[0x000e, 0x0073]);
        match walk_code_item(&item(&code)) {
            Err(DexError::InMethod { method, code_off, source }) => {
                assert_eq!(method, "LTest;->m");
                assert_eq!(code_off, 0x100);
                assert!(matches!(*source, DexError::UndefinedOpcode { opcode: 0x73, offset: 1 }));
            }
            other => panic!("unexpected {other:?}"),
        }
        let lenient = walk_code_item_with(&item(&code), UnknownOpcodePolicy::Skip).unwrap();
        assert_eq!(lenient.len(), 2);
        assert!(lenient[1].is_undefined);
    }
}
