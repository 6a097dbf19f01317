//! Small text helpers shared by the parser, the mock judge and evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(64);
    for byte in digest.iter() {
        out.push(nibble(byte >> 4));
        out.push(nibble(byte & 0x0f));
    }
    out
}

/// 64-bit FNV-1a, for cheap stable bucketing.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn nibble(n: u8) -> char {
    char::from_digit(u32::from(n), 16).unwrap_or('0')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercased alphanumeric words of `text`, in order.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Byte offsets of every occurrence of `phrase` in `haystack` that starts and
/// ends on a word boundary. Both arguments are expected to be lowercase.
pub fn phrase_positions(haystack: &str, phrase: &str) -> Vec<usize> {
    let mut found = Vec::new();
    if phrase.is_empty() {
        return found;
    }
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(phrase) {
        let start = from + rel;
        let end = start + phrase.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            found.push(start);
        }
        from = start + phrase.chars().next().map_or(1, char::len_utf8);
    }
    found
}

pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    !phrase_positions(haystack, phrase).is_empty()
}

/// A decimal literal found in free text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumberLiteral {
    pub value: f64,
    /// Digits after the decimal point as written.
    pub decimals: usize,
    pub start: usize,
    pub end: usize,
}

/// Scans unsigned decimal literals (`12`, `0.75`, `.5` is not accepted) that
/// are not glued to a preceding letter, digit or dot.
pub fn number_literals(text: &str) -> Vec<NumberLiteral> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let glued = i > 0 && {
            let prev = text[..i].chars().next_back().unwrap_or(' ');
            is_word_char(prev) || prev == '.'
        };
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let mut decimals = 0;
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
                decimals += 1;
            }
        }
        if glued {
            continue;
        }
        if let Ok(value) = text[start..i].parse::<f64>() {
            out.push(NumberLiteral {
                value,
                decimals,
                start,
                end: i,
            });
        }
    }
    out
}

/// Appends `s` as a JSON string literal (with quotes) to `out`.
pub fn push_json_string(out: &mut String, s: &str) {
    use core::fmt::Write;
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Splits text into sentences on `.`, `!`, `?` and newlines. A dot between
/// two digits (a decimal point) does not end a sentence.
pub fn sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let boundary = match b {
            b'!' | b'?' | b'\n' => true,
            b'.' => {
                let digit_before = i > 0 && bytes[i - 1].is_ascii_digit();
                let digit_after = i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit();
                !(digit_before && digit_after)
            }
            _ => false,
        };
        if boundary {
            let s = text[start..i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_respects_word_boundaries() {
        assert!(contains_phrase("it is roughly 2 m", "roughly"));
        assert!(!contains_phrase("thoroughly", "rough"));
        assert_eq!(phrase_positions("above, above", "above"), [0, 7]);
    }

    #[test]
    fn literals_skip_identifiers() {
        let lits = number_literals("region1 is 11.50 m from region2, 3 ft");
        let values: Vec<f64> = lits.iter().map(|l| l.value).collect();
        assert_eq!(values, [11.5, 3.0]);
        assert_eq!(lits[0].decimals, 2);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
