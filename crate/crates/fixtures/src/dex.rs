//! Minimal DEX assembler for test fixtures.
//!
//! Writes string_ids, type_ids, proto_ids, method_ids, class_defs and a data
//! section holding code items, string data, class data and the map list,
//! then patches file_size, the SHA-1 signature and the Adler-32 checksum.
//! Every method shares the `()V` prototype.

use std::collections::BTreeSet;

use sha1::{Digest, Sha1};

const NO_INDEX: u32 = 0xffff_ffff;

/// Builds a Dalvik instruction stream in 16-bit code units.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Asm {
    units: Vec<u16>,
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    /// One instruction: `op | hi << 8` followed by `rest`.
    pub fn insn(&mut self, op: u8, hi: u8, rest: &[u16]) -> &mut Self {
        self.units.push(op as u16 | (hi as u16) << 8);
        self.units.extend_from_slice(rest);
        self
    }

    /// Instruction with all operand bits zero, `width` code units long.
    pub fn op(&mut self, op: u8, width: usize) -> &mut Self {
        self.insn(op, 0, &vec![0; width - 1])
    }

    /// Pads with a nop so the next unit sits on a 4-byte boundary.
    pub fn align(&mut self) -> &mut Self {
        if self.units.len() % 2 == 1 {
            self.units.push(0);
        }
        self
    }

    pub fn packed_switch_payload(&mut self, first_key: i32, targets: &[i32]) -> &mut Self {
        self.units.push(0x0100);
        self.units.push(targets.len() as u16);
        self.push_u32(first_key as u32);
        for &t in targets {
            self.push_u32(t as u32);
        }
        self
    }

    pub fn sparse_switch_payload(&mut self, keys: &[i32], targets: &[i32]) -> &mut Self {
        assert_eq!(keys.len(), targets.len());
        self.units.push(0x0200);
        self.units.push(keys.len() as u16);
        for &k in keys {
            self.push_u32(k as u32);
        }
        for &t in targets {
            self.push_u32(t as u32);
        }
        self
    }

    pub fn fill_array_payload(&mut self, element_width: u16, data: &[u8]) -> &mut Self {
        assert!(element_width > 0 && data.len() % element_width as usize == 0);
        self.units.push(0x0300);
        self.units.push(element_width);
        self.push_u32((data.len() / element_width as usize) as u32);
        for pair in data.chunks(2) {
            self.units.push(pair[0] as u16 | (*pair.get(1).unwrap_or(&0) as u16) << 8);
        }
        self
    }

    fn push_u32(&mut self, v: u32) {
        self.units.push(v as u16);
        self.units.push((v >> 16) as u16);
    }

    /// Current length in code units.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[u16] {
        &self.units
    }
}

#[derive(Debug, Clone)]
pub struct MethodDef {
    pub name: String,
    /// `None` for abstract or native methods.
    pub code: Option<Vec<u16>>,
    pub registers: u16,
}

impl MethodDef {
    pub fn new(name: &str, code: &Asm) -> Self {
        MethodDef {
            name: name.to_string(),
            code: Some(code.units().to_vec()),
            registers: 16,
        }
    }

    pub fn without_code(name: &str) -> Self {
        MethodDef {
            name: name.to_string(),
            code: None,
            registers: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassDefSpec {
    pub descriptor: String,
    pub direct: Vec<MethodDef>,
    pub virtual_: Vec<MethodDef>,
}

#[derive(Debug, Clone)]
pub struct DexBuilder {
    version: [u8; 3],
    classes: Vec<ClassDefSpec>,
}

impl Default for DexBuilder {
    fn default() -> Self {
        DexBuilder {
            version: *b"035",
            classes: Vec::new(),
        }
    }
}

fn uleb(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn put_u32(buf: &mut [u8], off: usize, v: u32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn align4(buf: &mut Vec<u8>) {
    while buf.len() % 4 != 0 {
        buf.push(0);
    }
}

/// Adler-32 computed one byte at a time with a modulo per step.
pub fn naive_adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in data {
        a = (a + x as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

/// Recomputes the signature and checksum of a DEX image in place.
pub fn fix_up(bytes: &mut [u8]) {
    let sig = Sha1::digest(&bytes[32..]);
    bytes[12..32].copy_from_slice(&sig);
    let sum = naive_adler32(&bytes[12..]);
    put_u32(bytes, 8, sum);
}

impl DexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(mut self, v: &[u8; 3]) -> Self {
        self.version = *v;
        self
    }

    /// Adds a class. Methods are laid out in class data in method-index
    /// order, which for one class is the byte order of their names.
    pub fn class(mut self, descriptor: &str, direct: Vec<MethodDef>, virtual_: Vec<MethodDef>) -> Self {
        self.classes.push(ClassDefSpec {
            descriptor: descriptor.to_string(),
            direct,
            virtual_,
        });
        self
    }

    pub fn build(&self) -> Vec<u8> {
        let mut strings: BTreeSet<&str> = BTreeSet::from(["V"]);
        for c in &self.classes {
            strings.insert(&c.descriptor);
            for m in c.direct.iter().chain(&c.virtual_) {
                strings.insert(&m.name);
            }
        }
        let strings: Vec<&str> = strings.into_iter().collect();
        let sidx = |s: &str| strings.binary_search(&s).unwrap() as u32;

        let mut types: Vec<u32> = self.classes.iter().map(|c| sidx(&c.descriptor)).collect();
        types.push(sidx("V"));
        types.sort_unstable();
        types.dedup();
        let tidx = |s: &str| types.binary_search(&sidx(s)).unwrap() as u32;

        // (class type, name string)
        let mut methods: Vec<(u32, u32)> = Vec::new();
        for c in &self.classes {
            for m in c.direct.iter().chain(&c.virtual_) {
                methods.push((tidx(&c.descriptor), sidx(&m.name)));
            }
        }
        methods.sort_unstable();
        methods.dedup();
        let midx = |class: &str, name: &str| methods.binary_search(&(tidx(class), sidx(name))).unwrap() as u32;

        let string_ids_off = 0x70;
        let type_ids_off = string_ids_off + 4 * strings.len();
        let proto_ids_off = type_ids_off + 4 * types.len();
        let method_ids_off = proto_ids_off + 12;
        let class_defs_off = method_ids_off + 8 * methods.len();
        let data_off = class_defs_off + 32 * self.classes.len();

        let mut out = vec![0u8; data_off];
        for (i, &t) in types.iter().enumerate() {
            put_u32(&mut out, type_ids_off + 4 * i, t);
        }
        put_u32(&mut out, proto_ids_off, sidx("V"));
        put_u32(&mut out, proto_ids_off + 4, tidx("V"));
        for (i, &(class, name)) in methods.iter().enumerate() {
            let o = method_ids_off + 8 * i;
            out[o..o + 2].copy_from_slice(&(class as u16).to_le_bytes());
            out[o + 2..o + 4].copy_from_slice(&0u16.to_le_bytes());
            put_u32(&mut out, o + 4, name);
        }

        // code items
        align4(&mut out);
        let code_start = out.len();
        let mut code_count = 0u32;
        let mut code_offs: Vec<Vec<(u32, u32, u32)>> = Vec::new(); // per class: (method_idx, flags, code_off), direct then virtual
        let mut split: Vec<usize> = Vec::new();
        for c in &self.classes {
            let mut list = Vec::new();
            for (kind, ms) in [(0, &c.direct), (1, &c.virtual_)] {
                let mut entries: Vec<(u32, &MethodDef)> = ms.iter().map(|m| (midx(&c.descriptor, &m.name), m)).collect();
                entries.sort_by_key(|e| e.0);
                for (idx, m) in entries {
                    let off = match &m.code {
                        Some(units) => {
                            align4(&mut out);
                            let off = out.len() as u32;
                            out.extend_from_slice(&m.registers.to_le_bytes());
                            out.extend_from_slice(&[0; 6]); // ins, outs, tries
                            out.extend_from_slice(&0u32.to_le_bytes()); // debug_info_off
                            out.extend_from_slice(&(units.len() as u32).to_le_bytes());
                            for u in units {
                                out.extend_from_slice(&u.to_le_bytes());
                            }
                            code_count += 1;
                            off
                        }
                        None => 0,
                    };
                    let flags = match (kind, m.code.is_some()) {
                        (0, _) => 0x0009,     // public static
                        (_, true) => 0x0001,  // public
                        (_, false) => 0x0401, // public abstract
                    };
                    list.push((idx, flags, off));
                }
                if kind == 0 {
                    split.push(list.len());
                }
            }
            code_offs.push(list);
        }

        let string_data_start = out.len();
        let mut string_offs = Vec::new();
        for s in &strings {
            string_offs.push(out.len() as u32);
            uleb(&mut out, s.chars().count() as u32);
            out.extend_from_slice(s.as_bytes());
            out.push(0);
        }
        for (i, &o) in string_offs.iter().enumerate() {
            put_u32(&mut out, string_ids_off + 4 * i, o);
        }

        let class_data_start = out.len();
        for (ci, c) in self.classes.iter().enumerate() {
            let list = &code_offs[ci];
            let n_direct = split[ci];
            let data_at = out.len() as u32;
            uleb(&mut out, 0);
            uleb(&mut out, 0);
            uleb(&mut out, n_direct as u32);
            uleb(&mut out, (list.len() - n_direct) as u32);
            for part in [&list[..n_direct], &list[n_direct..]] {
                let mut prev = 0;
                for &(idx, flags, off) in part {
                    uleb(&mut out, idx - prev);
                    uleb(&mut out, flags);
                    uleb(&mut out, off);
                    prev = idx;
                }
            }
            let o = class_defs_off + 32 * ci;
            let has_methods = !list.is_empty();
            for (k, v) in [
                tidx(&c.descriptor),
                0x0001,
                NO_INDEX,
                0,
                NO_INDEX,
                0,
                if has_methods { data_at } else { 0 },
                0,
            ]
            .into_iter()
            .enumerate()
            {
                put_u32(&mut out, o + 4 * k, v);
            }
        }

        align4(&mut out);
        let map_off = out.len();
        let mut map: Vec<(u16, u32, usize)> = vec![
            (0x0000, 1, 0),
            (0x0001, strings.len() as u32, string_ids_off),
            (0x0002, types.len() as u32, type_ids_off),
            (0x0003, 1, proto_ids_off),
        ];
        if !methods.is_empty() {
            map.push((0x0005, methods.len() as u32, method_ids_off));
        }
        if !self.classes.is_empty() {
            map.push((0x0006, self.classes.len() as u32, class_defs_off));
        }
        if code_count > 0 {
            map.push((0x2001, code_count, code_start.next_multiple_of(4)));
        }
        map.push((0x2002, strings.len() as u32, string_data_start));
        if !self.classes.is_empty() {
            map.push((0x2000, self.classes.len() as u32, class_data_start));
        }
        map.push((0x1000, 1, map_off));
        out.extend_from_slice(&(map.len() as u32).to_le_bytes());
        for (ty, size, off) in &map {
            out.extend_from_slice(&ty.to_le_bytes());
            out.extend_from_slice(&0u16.to_le_bytes());
            out.extend_from_slice(&size.to_le_bytes());
            out.extend_from_slice(&(*off as u32).to_le_bytes());
        }

        let file_size = out.len();
        out[0..4].copy_from_slice(b"dex\n");
        out[4..7].copy_from_slice(&self.version);
        out[7] = 0;
        let header = [
            (32, file_size),
            (36, 0x70),
            (52, map_off),
            (56, strings.len()),
            (60, string_ids_off),
            (64, types.len()),
            (68, type_ids_off),
            (72, 1),
            (76, proto_ids_off),
            (88, methods.len()),
            (92, if methods.is_empty() { 0 } else { method_ids_off }),
            (96, self.classes.len()),
            (100, if self.classes.is_empty() { 0 } else { class_defs_off }),
            (104, file_size - data_off),
            (108, data_off),
        ];
        for (off, v) in header {
            put_u32(&mut out, off, v as u32);
        }
        put_u32(&mut out, 40, 0x1234_5678);
        fix_up(&mut out);
        out
    }
}

/// Widths, in code units, of the opcodes used by the fixtures and the
/// synthetic grammars, written out from the Dalvik format table.
pub fn width(op: u8) -> usize {
    match op {
        0x00 | 0x01 | 0x07 | 0x0a | 0x0c | 0x0e | 0x0f | 0x11 | 0x12 | 0x28 | 0xb0 | 0xb1 | 0x21 | 0x1d | 0x1e
        | 0x27 => 1,
        0x13 | 0x1a | 0x1c | 0x1f | 0x20 | 0x22 | 0x23 | 0x29 | 0x32 | 0x33 | 0x34 | 0x35 | 0x38 | 0x39 | 0x44
        | 0x46 | 0x4b | 0x4d | 0x52 | 0x54 | 0x59 | 0x5b | 0x60 | 0x62 | 0x67 | 0x69 | 0x90 | 0x91 | 0x92 | 0xd0
        | 0xd8 | 0xda => 2,
        0x14 | 0x1b | 0x24 | 0x26 | 0x2a | 0x2b | 0x2c | 0x6e | 0x6f | 0x70 | 0x71 | 0x72 | 0x74 | 0x77 | 0xfc => 3,
        0xfa => 4,
        0x18 => 5,
        _ => panic!("no fixture width for opcode {op:#04x}"),
    }
}

/// A DEX whose extracted opcode sequence is exactly `opcodes`, split over
/// methods of at most `per_method` instructions. Operands are all zero.
pub fn program_dex(opcodes: &[u8], per_method: usize) -> Vec<u8> {
    let methods: Vec<MethodDef> = opcodes
        .chunks(per_method.max(1))
        .enumerate()
        .map(|(i, chunk)| {
            let mut asm = Asm::new();
            for &op in chunk {
                asm.op(op, width(op));
            }
            MethodDef::new(&format!("m{i:05}"), &asm)
        })
        .collect();
    DexBuilder::new().class("Lapp/Main;", methods, vec![]).build()
}
