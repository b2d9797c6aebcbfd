//! Unsigned LEB128 as used by `class_data_item` and `string_data_item`.

/// Decodes a uleb128 at `pos`, returning the value and the number of bytes
/// consumed. DEX caps these at five bytes (32-bit values); anything longer,
/// or running off the end of the buffer, yields `None`.
pub fn read_uleb128(bytes: &[u8], pos: usize) -> Option<(u32, usize)> {
    let mut result: u32 = 0;
    for i in 0..5 {
        let byte = *bytes.get(pos + i)?;
        let chunk = (byte & 0x7f) as u32;
        if i == 4 && chunk > 0x0f {
            return None;
        }
        result |= chunk << (7 * i);
        if byte & 0x80 == 0 {
            return Some((result, i + 1));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(mut value: u32) -> Vec<u8> {
        let mut out = Vec::new();
        loop {
            let byte = (value & 0x7f) as u8;
            value >>= 7;
            if value == 0 {
                out.push(byte);
                return out;
            }
            out.push(byte | 0x80);
        }
    }

    #[test]
    fn known_encodings() {
        // Values from the DEX format documentation.
        assert_eq!(read_uleb128(&[0x00], 0), Some((0, 1)));
        assert_eq!(read_uleb128(&[0x01], 0), Some((1, 1)));
        assert_eq!(read_uleb128(&[0x7f], 0), Some((127, 1)));
        assert_eq!(read_uleb128(&[0x80, 0x7f], 0), Some((16256, 2)));
        assert_eq!(read_uleb128(&[0xff, 0xff, 0xff, 0xff, 0x0f], 0), Some((u32::MAX, 5)));
    }

    #[test]
    fn rejects_truncated_and_overlong() {
        assert_eq!(read_uleb128(&[0x80], 0), None);
        assert_eq!(read_uleb128(&[], 0), None);
        assert_eq!(read_uleb128(&[0xff, 0xff, 0xff, 0xff, 0x1f], 0), None);
        assert_eq!(read_uleb128(&[0x80, 0x80, 0x80, 0x80, 0x80, 0x00], 0), None);
    }

    proptest! {
        #[test]
        fn decodes_what_was_encoded(value: u32, prefix in 0usize..4) {
            let mut buf = vec![0xaa; prefix];
            let enc = encode(value);
            buf.extend_from_slice(&enc);
            prop_assert_eq!(read_uleb128(&buf, prefix), Some((value, enc.len())));
        }
    }
}
