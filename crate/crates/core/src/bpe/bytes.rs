use std::sync::OnceLock;

/// The reversible byte -> printable codepoint table of byte-level BPE.
///
/// Printable Latin-1 bytes map to themselves; every other byte is shifted to
/// `U+0100` and up, in byte order.
pub fn bytes_to_unicode() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        let mut table = ['\0'; 256];
        let mut next = 0u32;
        for b in 0..256u32 {
            table[b as usize] = if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                let c = char::from_u32(256 + next).unwrap();
                next += 1;
                c
            };
        }
        table
    })
}

fn unicode_to_bytes() -> &'static std::collections::HashMap<char, u8> {
    static TABLE: OnceLock<std::collections::HashMap<char, u8>> = OnceLock::new();
    TABLE.get_or_init(|| {
        bytes_to_unicode()
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect()
    })
}

#[inline]
pub fn byte_to_char(b: u8) -> char {
    bytes_to_unicode()[b as usize]
}

pub fn char_to_byte(c: char) -> Option<u8> {
    unicode_to_bytes().get(&c).copied()
}
