use std::ops::Range;

/// ASCII whitespace as seen by the chunker.
#[inline]
pub fn is_split_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0B | 0x0C)
}

/// Splits bytes into the units merges operate within.
///
/// Runs of non-whitespace form chunks. A single space directly before such a
/// run is attached to it (`" word"`); any other whitespace forms its own
/// chunk. The ranges tile `text` exactly.
pub fn chunk_ranges(text: &[u8]) -> Vec<Range<usize>> {
    let n = text.len();
    let mut out = Vec::new();
    let word_end = |mut k: usize| {
        while k < n && !is_split_whitespace(text[k]) {
            k += 1;
        }
        k
    };
    let mut i = 0;
    while i < n {
        if is_split_whitespace(text[i]) {
            let mut j = i;
            while j < n && is_split_whitespace(text[j]) {
                j += 1;
            }
            if j < n && text[j - 1] == b' ' {
                if j - 1 > i {
                    out.push(i..j - 1);
                }
                let k = word_end(j);
                out.push(j - 1..k);
                i = k;
            } else {
                out.push(i..j);
                i = j;
            }
        } else {
            let k = word_end(i);
            out.push(i..k);
            i = k;
        }
    }
    out
}
