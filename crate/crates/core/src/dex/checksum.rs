//! Adler-32, the DEX header checksum.

const MOD_ADLER: u32 = 65_521;
// Largest n such that 255 n (n + 1) / 2 + (n + 1) (MOD_ADLER - 1) fits in u32.
const NMAX: usize = 5552;

pub fn adler32(data: &[u8]) -> u32 {
    let mut a: u32 = 1;
    let mut b: u32 = 0;
    for chunk in data.chunks(NMAX) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD_ADLER;
        b %= MOD_ADLER;
    }
    (b << 16) | a
}
