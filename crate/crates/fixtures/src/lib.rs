//! Test fixtures: a small DEX assembler, zip/APK builders, a hand-assembled
//! reference DEX with its expected opcode listing, and synthetic corpora.

pub mod apk;
pub mod dex;
pub mod synth;

use dex::{Asm, DexBuilder, MethodDef};

/// One decoded instruction of the reference listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Listed {
    pub offset: usize,
    pub opcode: u8,
    pub width: usize,
    pub payload: bool,
}

#[derive(Debug, Clone)]
pub struct ListedMethod {
    pub name: &'static str,
    pub insns_size: usize,
    pub listing: Vec<Listed>,
}

#[derive(Debug, Clone)]
pub struct HandFixture {
    pub bytes: Vec<u8>,
    /// Methods with code, in class_defs order, direct before virtual.
    pub methods: Vec<ListedMethod>,
}

impl HandFixture {
    /// Opcode column of the listing, payload pseudo-instructions omitted.
    pub fn opcode_column(&self) -> Vec<u8> {
        self.methods
            .iter()
            .flat_map(|m| m.listing.iter().filter(|l| !l.payload).map(|l| l.opcode))
            .collect()
    }
}

fn listing(rows: &[(u8, usize, bool)]) -> (usize, Vec<Listed>) {
    let mut offset = 0;
    let out = rows
        .iter()
        .map(|&(opcode, width, payload)| {
            let l = Listed {
                offset,
                opcode,
                width,
                payload,
            };
            offset += width;
            l
        })
        .collect();
    (offset, out)
}

/// Three classes, one without class data, five methods with code and one
/// abstract method. Covers all three payload kinds, an alignment nop, wide
/// formats (51l, 45cc, 30t) and a plain nop.
pub fn hand_fixture() -> HandFixture {
    let mut a_switch = Asm::new();
    a_switch
        .insn(0x12, 0x30, &[]) // const/4 v0, #3
        .insn(0x2b, 0x00, &[7, 0]) // packed-switch v0, +7
        .insn(0x2c, 0x00, &[14, 0]) // sparse-switch v0, +14
        .insn(0x0e, 0x00, &[]) // return-void
        .packed_switch_payload(0, &[3, 3, 3])
        .sparse_switch_payload(&[-1, 1000], &[3, 3]);

    let mut b_fill = Asm::new();
    b_fill
        .insn(0x12, 0x30, &[]) // const/4 v0, #3
        .insn(0x23, 0x00, &[0]) // new-array v0, v0, type@0
        .insn(0x26, 0x00, &[5, 0]) // fill-array-data v0, +5
        .insn(0x0e, 0x00, &[]) // return-void
        .align()
        .fill_array_payload(4, &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);

    let mut d_calls = Asm::new();
    d_calls
        .insn(0x6e, 0x10, &[0, 0]) // invoke-virtual {v0}, meth@0
        .insn(0x0a, 0x00, &[]) // move-result v0
        .insn(0x18, 0x02, &[0x5678, 0x1234, 0, 0]) // const-wide v2, #0x12345678
        .insn(0xfa, 0x10, &[0, 0, 0]) // invoke-polymorphic {v0}, meth@0, proto@0
        .insn(0x2a, 0x00, &[2, 0]) // goto/32 +2
        .insn(0x1a, 0x01, &[0]) // const-string v1, string@0
        .insn(0x34, 0x10, &[0xfffe]) // if-lt v0, v1, -2
        .insn(0xd8, 0x00, &[0x0100]) // add-int/lit8 v0, v0, #1
        .insn(0x0f, 0x00, &[]); // return v0

    let mut e_main = Asm::new();
    e_main.insn(0x00, 0x00, &[]).insn(0x0e, 0x00, &[]); // nop; return-void

    let mut f_wide = Asm::new();
    f_wide
        .insn(0x14, 0x00, &[0xbeef, 0xdead]) // const v0, #0xdeadbeef
        .insn(0x74, 0x01, &[0, 0]) // invoke-virtual/range {v0}, meth@0
        .insn(0x0e, 0x00, &[]);

    let bytes = DexBuilder::new()
        .class(
            "La/Alpha;",
            vec![MethodDef::new("a_switch", &a_switch), MethodDef::new("b_fill", &b_fill)],
            vec![MethodDef::without_code("c_abstract"), MethodDef::new("d_calls", &d_calls)],
        )
        .class(
            "Lb/Beta;",
            vec![MethodDef::new("e_main", &e_main)],
            vec![MethodDef::new("f_wide", &f_wide)],
        )
        .class("Lc/Empty;", vec![], vec![])
        .build();

    let method = |name, rows: &[(u8, usize, bool)]| {
        let (insns_size, listing) = listing(rows);
        ListedMethod {
            name,
            insns_size,
            listing,
        }
    };
    let methods = vec![
        method(
            "La/Alpha;->a_switch",
            &[(0x12, 1, false), (0x2b, 3, false), (0x2c, 3, false), (0x0e, 1, false), (0x00, 10, true), (0x00, 10, true)],
        ),
        method(
            "La/Alpha;->b_fill",
            &[(0x12, 1, false), (0x23, 2, false), (0x26, 3, false), (0x0e, 1, false), (0x00, 1, false), (0x00, 10, true)],
        ),
        method(
            "La/Alpha;->d_calls",
            &[
                (0x6e, 3, false),
                (0x0a, 1, false),
                (0x18, 5, false),
                (0xfa, 4, false),
                (0x2a, 3, false),
                (0x1a, 2, false),
                (0x34, 2, false),
                (0xd8, 2, false),
                (0x0f, 1, false),
            ],
        ),
        method("Lb/Beta;->e_main", &[(0x00, 1, false), (0x0e, 1, false)]),
        method("Lb/Beta;->f_wide", &[(0x14, 3, false), (0x74, 3, false), (0x0e, 1, false)]),
    ];
    HandFixture { bytes, methods }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_sizes_match_assembled_code() {
        let f = hand_fixture();
        let sizes: Vec<usize> = f.methods.iter().map(|m| m.insns_size).collect();
        assert_eq!(sizes, vec![28, 18, 23, 2, 7]);
        assert_eq!(&f.bytes[..8], b"dex\n035\0");
        assert_eq!(u32::from_le_bytes(f.bytes[32..36].try_into().unwrap()) as usize, f.bytes.len());
    }

    #[test]
    fn payload_alignment() {
        let mut a = Asm::new();
        a.insn(0x0e, 0, &[]).align();
        assert_eq!(a.units(), &[0x000e, 0x0000]);
        a.align();
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn naive_adler_vector() {
        assert_eq!(dex::naive_adler32(b"Wikipedia"), 0x11e6_0398);
    }
}
