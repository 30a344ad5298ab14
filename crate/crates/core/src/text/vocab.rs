//! Frequency-ranked vocabulary with reserved special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenizer::split_tokens;
use super::TextError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token table with reserved ids 0..4 and stable id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabData", into = "VocabData")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabData {
    tokens: Vec<String>,
    lowercase: bool,
}

impl From<Vocab> for VocabData {
    fn from(v: Vocab) -> Self {
        VocabData {
            tokens: v.tokens,
            lowercase: v.lowercase,
        }
    }
}

impl TryFrom<VocabData> for Vocab {
    type Error = String;

    fn try_from(data: VocabData) -> Result<Self, String> {
        if data.tokens.len() < RESERVED_TOKENS.len()
            || data.tokens[..RESERVED_TOKENS.len()] != RESERVED_TOKENS
        {
            return Err("vocabulary must start with the reserved tokens".into());
        }
        Ok(Vocab::from_tokens(data.tokens, data.lowercase))
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            lookup,
            lowercase,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Id of a token as produced by the tokenizer (already case-folded).
    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokens in id order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Build a vocabulary of the most frequent corpus tokens.
///
/// Ties at equal frequency break lexicographically; reserved tokens are
/// always present and count against `max_size`.
pub fn build_vocab<'a, I>(corpus: I, max_size: usize) -> Result<Vocab, TextError>
where
    I: IntoIterator<Item = &'a str>,
{
    build_vocab_with_case(corpus, max_size, true)
}

/// [`build_vocab`] with explicit case handling (`lowercase = false` keeps
/// the corpus casing, mirroring cased pretrained vocabularies).
pub fn build_vocab_with_case<'a, I>(
    corpus: I,
    max_size: usize,
    lowercase: bool,
) -> Result<Vocab, TextError>
where
    I: IntoIterator<Item = &'a str>,
{
    if max_size <= RESERVED_TOKENS.len() {
        return Err(TextError::VocabTooSmall {
            max_size,
            reserved: RESERVED_TOKENS.len(),
        });
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for (token, _, _) in split_tokens(text, lowercase) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    for (token, _) in ranked.into_iter().take(max_size - RESERVED_TOKENS.len()) {
        tokens.push(token);
    }
    Ok(Vocab::from_tokens(tokens, lowercase))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_orders_tokens() {
        let vocab = build_vocab(["a b b"], 10).unwrap();
        let b = vocab.id_of("b").unwrap();
        let a = vocab.id_of("a").unwrap();
        assert!(b < a, "more frequent token gets the smaller id");
        assert_eq!(vocab.len(), 6);
    }

    #[test]
    fn max_size_caps_the_table() {
        let corpus = ["q w e r t y u i o p"];
        let vocab = build_vocab(corpus, 5).unwrap();
        assert_eq!(vocab.len(), 5);
        for (i, reserved) in RESERVED_TOKENS.iter().enumerate() {
            assert_eq!(vocab.token(i), Some(*reserved));
        }
    }

    #[test]
    fn tie_at_cutoff_keeps_lexicographically_smaller() {
        // "x" and "y" both occur once; only one slot remains.
        let vocab = build_vocab(["y x"], 5).unwrap();
        assert!(vocab.id_of("x").is_some());
        assert!(vocab.id_of("y").is_none());
    }

    #[test]
    fn empty_corpus_keeps_reserved_only() {
        let vocab = build_vocab([], 100).unwrap();
        assert_eq!(vocab.len(), RESERVED_TOKENS.len());
    }

    #[test]
    fn too_small_max_size_is_rejected() {
        assert!(build_vocab(["a"], 4).is_err());
    }

    #[test]
    fn serde_roundtrip_preserves_order_and_case_flag() {
        let vocab = build_vocab_with_case(["Apple apple Banana"], 10, false).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
        assert!(!back.lowercase());
        assert_eq!(back.id_of("Apple"), vocab.id_of("Apple"));
    }

    #[test]
    fn deserializing_without_reserved_prefix_fails() {
        let bad = r#"{"tokens":["foo","bar"],"lowercase":true}"#;
        assert!(serde_json::from_str::<Vocab>(bad).is_err());
    }
}
