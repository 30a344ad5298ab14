//! SQuAD v1.1 parsing, vocabulary building, offset-tracking tokenization,
//! and sliding-window featurization of (question, passage) pairs.

mod features;
mod squad;
mod tokenizer;
mod vocab;

pub use features::{
    featurize, map_answer_span, Feature, Featurized, FeaturizeConfig, SequenceLayout,
};
pub use squad::{load_squad, load_squad_value, SquadAnswer, SquadExample};
pub use tokenizer::{tokenize, TokenSpan};
pub use vocab::{
    build_vocab, build_vocab_with_case, Vocab, CLS_ID, PAD_ID, RESERVED_TOKENS, SEP_ID, UNK_ID,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed SQuAD document at {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("vocabulary max_size {max_size} must exceed the {reserved} reserved tokens")]
    VocabTooSmall { max_size: usize, reserved: usize },
    #[error("example {qas_id}: empty passage")]
    EmptyPassage { qas_id: String },
    #[error("example {qas_id}: no room for passage tokens (max_seq_length {max_seq_length}, question {question_len} tokens)")]
    NoPassageCapacity {
        qas_id: String,
        max_seq_length: usize,
        question_len: usize,
    },
    #[error("doc_stride must be at least 1")]
    ZeroDocStride,
}
