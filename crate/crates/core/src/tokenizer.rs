//! Byte-level tokenizer with atomic special tokens.
//!
//! | id       | token                    |
//! |----------|--------------------------|
//! | 0        | `<\|begin_of_text\|>`    |
//! | 1        | `<\|start_header_id\|>`  |
//! | 2        | `<\|end_header_id\|>`    |
//! | 3        | `<\|end_of_text\|>`      |
//! | 4        | `<\|eos\|>`              |
//! | 5..=260  | raw byte `id - 5`        |
//!
//! Encoding is greedy left to right: at each position the longest special
//! string that matches is emitted as one token, otherwise the next byte.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_SPECIALS: usize = 5;
pub const BYTE_OFFSET: u32 = NUM_SPECIALS as u32;
pub const VOCAB_SIZE: usize = NUM_SPECIALS + 256;

pub const BEGIN_OF_TEXT_ID: u32 = 0;
pub const START_HEADER_ID: u32 = 1;
pub const END_HEADER_ID: u32 = 2;
pub const END_OF_TEXT_ID: u32 = 3;
pub const EOS_ID: u32 = 4;

pub const DEFAULT_SPECIALS: [&str; NUM_SPECIALS] =
    ["<|begin_of_text|>", "<|start_header_id|>", "<|end_header_id|>", "<|end_of_text|>", "<|eos|>"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("token id {0} is outside the vocabulary")]
    InvalidTokenId(u32),
    #[error("special tokens must be distinct and non-empty")]
    BadSpecials,
}

/// Ordered token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        TokenSequence(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    specials: Vec<String>,
    /// Special ids sorted by descending string length for longest match.
    match_order: Vec<u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::with_specials(DEFAULT_SPECIALS.map(String::from)).expect("default specials are valid")
    }
}

impl Vocab {
    /// Vocabulary whose ids 0..=4 are the given strings, in order.
    pub fn with_specials(specials: [String; NUM_SPECIALS]) -> Result<Self, TokenizerError> {
        for (i, s) in specials.iter().enumerate() {
            if s.is_empty() || specials[..i].contains(s) {
                return Err(TokenizerError::BadSpecials);
            }
        }
        let mut match_order: Vec<u32> = (0..NUM_SPECIALS as u32).collect();
        match_order.sort_by_key(|&id| std::cmp::Reverse(specials[id as usize].len()));
        Ok(Self { specials: specials.to_vec(), match_order })
    }

    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn special(&self, id: u32) -> Option<&str> {
        self.specials.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let bytes = text.as_bytes();
        let mut ids = Vec::with_capacity(bytes.len());
        let mut i = 0;
        'outer: while i < bytes.len() {
            for &id in &self.match_order {
                let s = self.specials[id as usize].as_bytes();
                if bytes[i..].starts_with(s) {
                    ids.push(id);
                    i += s.len();
                    continue 'outer;
                }
            }
            ids.push(BYTE_OFFSET + bytes[i] as u32);
            i += 1;
        }
        TokenSequence(ids)
    }

    /// Inverse of [`Vocab::encode`]. Byte runs that are not valid UTF-8 (only
    /// reachable from model output) are replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                id if (id as usize) < NUM_SPECIALS => bytes.extend_from_slice(self.specials[id as usize].as_bytes()),
                id if (id as usize) < VOCAB_SIZE => bytes.push((id - BYTE_OFFSET) as u8),
                id => return Err(TokenizerError::InvalidTokenId(id)),
            }
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// `(id, printable form)` for every entry, for audit dumps.
    pub fn table(&self) -> Vec<(u32, String)> {
        (0..VOCAB_SIZE as u32)
            .map(|id| {
                let shown = if (id as usize) < NUM_SPECIALS {
                    self.specials[id as usize].clone()
                } else {
                    ByteDisplay((id - BYTE_OFFSET) as u8).to_string()
                };
                (id, shown)
            })
            .collect()
    }
}

struct ByteDisplay(u8);

impl fmt::Display for ByteDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            b' ' => f.write_str("' '"),
            b if b.is_ascii_graphic() => write!(f, "{}", b as char),
            b => write!(f, "\\x{b:02x}"),
        }
    }
}

/// Encodes with the default vocabulary.
pub fn encode(text: &str) -> TokenSequence {
    Vocab::default().encode(text)
}

/// Decodes with the default vocabulary.
pub fn decode(ids: &[u32]) -> Result<String, TokenizerError> {
    Vocab::default().decode(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn special_atom() {
        assert_eq!(encode("<|end_of_text|>").0, vec![3]);
        assert_eq!(decode(&[3]).unwrap(), "<|end_of_text|>");
    }

    #[test]
    fn byte_mapping() {
        assert_eq!(encode("6m").0, vec![5 + b'6' as u32, 5 + b'm' as u32]);
    }

    #[test]
    fn empty() {
        assert!(encode("").is_empty());
        assert_eq!(decode(&[]).unwrap(), "");
    }

    #[test]
    fn invalid_id() {
        assert_eq!(decode(&[261]), Err(TokenizerError::InvalidTokenId(261)));
    }

    #[test]
    fn partial_special_is_bytes() {
        let ids = encode("<|end_of_tex");
        assert!(ids.iter().all(|&i| i >= BYTE_OFFSET));
    }

    #[test]
    fn table_has_every_id() {
        let t = Vocab::default().table();
        assert_eq!(t.len(), 261);
        assert_eq!(t[4].1, "<|eos|>");
        assert_eq!(t[5 + b'a' as usize].1, "a");
    }

    #[test]
    fn rejects_duplicate_specials() {
        let mut s = DEFAULT_SPECIALS.map(String::from);
        s[1] = s[0].clone();
        assert_eq!(Vocab::with_specials(s), Err(TokenizerError::BadSpecials));
    }

    proptest! {
        #[test]
        fn decode_encode_identity(s in "\\PC{0,200}") {
            prop_assert_eq!(decode(&encode(&s)).unwrap(), s);
        }

        #[test]
        fn decode_encode_identity_with_specials(parts in proptest::collection::vec(
            prop_oneof![Just("<|begin_of_text|>".to_string()), Just("<|end_of_text|>".to_string()),
                        Just("<|start_header_id|>".to_string()), "[ -~]{0,12}"], 0..20)) {
            let s: String = parts.concat();
            let ids = encode(&s);
            prop_assert!(ids.iter().all(|&i| (i as usize) < VOCAB_SIZE));
            prop_assert_eq!(decode(&ids).unwrap(), s);
        }
    }
}
