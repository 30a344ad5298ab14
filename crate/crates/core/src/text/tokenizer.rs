//! Whitespace/punctuation tokenizer that tracks character offsets.
//!
//! Offsets are code-point indices into the original text (the convention
//! SQuAD `answer_start` uses), half-open, and cover every non-whitespace
//! character: a token is either a maximal alphanumeric run or a single
//! other non-whitespace character.

use super::vocab::{Vocab, UNK_ID};

/// One tokenized unit: vocabulary id plus its source character span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

/// Split into (token text, char start, char end) triples.
pub(crate) fn split_tokens(text: &str, lowercase: bool) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut current_start = 0usize;

    let flush = |out: &mut Vec<(String, usize, usize)>, tok: &mut String, start: usize, end: usize| {
        if !tok.is_empty() {
            out.push((std::mem::take(tok), start, end));
        }
    };

    for (idx, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            flush(&mut out, &mut current, current_start, idx);
        } else if ch.is_alphanumeric() {
            if current.is_empty() {
                current_start = idx;
            }
            if lowercase {
                current.extend(ch.to_lowercase());
            } else {
                current.push(ch);
            }
        } else {
            flush(&mut out, &mut current, current_start, idx);
            let tok: String = if lowercase {
                ch.to_lowercase().collect()
            } else {
                ch.to_string()
            };
            out.push((tok, idx, idx + 1));
        }
    }
    let total = text.chars().count();
    flush(&mut out, &mut current, current_start, total);
    out
}

/// Tokenize against a vocabulary; out-of-vocabulary tokens map to `[UNK]`
/// but keep their true span.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenSpan> {
    split_tokens(text, vocab.lowercase())
        .into_iter()
        .map(|(token, start, end)| TokenSpan {
            id: vocab.id_of(&token).unwrap_or(UNK_ID),
            start,
            end,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::build_vocab;

    #[test]
    fn hand_tokenization_with_spans() {
        let vocab = build_vocab(["the cat ."], 10).unwrap();
        let spans = tokenize("The cat.", &vocab);
        let ids: Vec<usize> = spans.iter().map(|t| t.id).collect();
        assert_eq!(
            ids,
            vec![
                vocab.id_of("the").unwrap(),
                vocab.id_of("cat").unwrap(),
                vocab.id_of(".").unwrap()
            ]
        );
        let offsets: Vec<(usize, usize)> = spans.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(offsets, vec![(0, 3), (4, 7), (7, 8)]);
    }

    #[test]
    fn empty_text_gives_empty_list() {
        let vocab = build_vocab(["a"], 10).unwrap();
        assert!(tokenize("", &vocab).is_empty());
    }

    #[test]
    fn oov_maps_to_unk_with_true_span() {
        let vocab = build_vocab(["a"], 10).unwrap();
        let spans = tokenize("zzz", &vocab);
        assert_eq!(spans, vec![TokenSpan { id: UNK_ID, start: 0, end: 3 }]);
    }

    #[test]
    fn spans_cover_every_non_whitespace_char() {
        let text = "it's 1999, isn't it?  yes!";
        let spans = split_tokens(text, true);
        let mut covered = vec![false; text.chars().count()];
        for (_, s, e) in &spans {
            for c in covered.iter_mut().take(*e).skip(*s) {
                assert!(!*c, "overlapping spans");
                *c = true;
            }
        }
        for (i, ch) in text.chars().enumerate() {
            assert_eq!(covered[i], !ch.is_whitespace(), "char {i} ({ch:?})");
        }
    }

    #[test]
    fn cased_mode_preserves_case() {
        let spans = split_tokens("Cat", false);
        assert_eq!(spans[0].0, "Cat");
        let spans = split_tokens("Cat", true);
        assert_eq!(spans[0].0, "cat");
    }
}
