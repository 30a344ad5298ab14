//! Fixed-length windows over (question, passage) pairs.
//!
//! A featurized sequence is laid out as
//! `[CLS] question [SEP] passage-window [SEP] [PAD]...`; long passages
//! produce several windows whose starts advance by the doc stride.

use std::collections::BTreeMap;
use std::ops::Range;

use super::squad::SquadExample;
use super::tokenizer::tokenize;
use super::vocab::{Vocab, CLS_ID, PAD_ID, SEP_ID};
use super::TextError;

/// Index geometry of one featurized sequence. The six regions are disjoint,
/// ordered, and together cover `[0, max_seq_length)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub cls_index: usize,
    pub question_range: Range<usize>,
    pub sep1_index: usize,
    pub passage_range: Range<usize>,
    pub sep2_index: usize,
    pub pad_range: Range<usize>,
}

impl SequenceLayout {
    pub fn seq_len(&self) -> usize {
        self.pad_range.end
    }

    /// Question side of the zone partition: `[CLS]`, question tokens, first `[SEP]`.
    pub fn question_block(&self) -> Range<usize> {
        self.cls_index..self.sep1_index + 1
    }

    /// Passage side of the zone partition: passage tokens plus the final `[SEP]`.
    pub fn passage_block(&self) -> Range<usize> {
        self.passage_range.start..self.sep2_index + 1
    }

    /// Check the ordering/partition invariants.
    pub fn is_valid(&self) -> bool {
        self.cls_index == 0
            && self.question_range.start == 1
            && self.question_range.end == self.sep1_index
            && self.sep1_index + 1 == self.passage_range.start
            && self.passage_range.start <= self.passage_range.end
            && !self.passage_range.is_empty()
            && self.passage_range.end == self.sep2_index
            && self.sep2_index + 1 == self.pad_range.start
            && self.pad_range.start <= self.pad_range.end
    }
}

/// One training/decoding window of an example.
#[derive(Debug, Clone)]
pub struct Feature {
    pub qas_id: String,
    pub window_index: usize,
    pub input_ids: Vec<usize>,
    /// 0 on the question side (through the first `[SEP]`), 1 on the passage side.
    pub segment_ids: Vec<u8>,
    pub layout: SequenceLayout,
    /// Sequence position (inside `passage_range`) to context character span.
    pub token_to_orig: BTreeMap<usize, (usize, usize)>,
    /// Gold (start, end) token positions, inclusive, when the first gold
    /// answer lies inside this window.
    pub gold_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FeaturizeConfig {
    pub max_seq_length: usize,
    pub doc_stride: usize,
    pub max_query_tokens: usize,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        // Desk-scale defaults; the 512/128 pairing from full-scale runs is
        // equally valid configuration.
        Self {
            max_seq_length: 128,
            doc_stride: 32,
            max_query_tokens: 64,
        }
    }
}

/// Featurization output: windows plus any non-fatal warnings.
#[derive(Debug, Clone)]
pub struct Featurized {
    pub features: Vec<Feature>,
    pub warnings: Vec<String>,
}

/// Slide fixed-length windows over the passage of one example.
pub fn featurize(
    example: &SquadExample,
    vocab: &Vocab,
    cfg: &FeaturizeConfig,
) -> Result<Featurized, TextError> {
    if cfg.doc_stride == 0 {
        return Err(TextError::ZeroDocStride);
    }
    let mut warnings = Vec::new();

    let mut question = tokenize(&example.question, vocab);
    if question.len() > cfg.max_query_tokens {
        warnings.push(format!(
            "question {} truncated from {} to {} tokens",
            example.qas_id,
            question.len(),
            cfg.max_query_tokens
        ));
        question.truncate(cfg.max_query_tokens);
    }

    let passage = tokenize(&example.context, vocab);
    if passage.is_empty() {
        return Err(TextError::EmptyPassage {
            qas_id: example.qas_id.clone(),
        });
    }

    // [CLS] + question + [SEP] + window + [SEP] must fit.
    let specials = 3;
    let capacity = cfg
        .max_seq_length
        .checked_sub(specials + question.len())
        .filter(|&c| c > 0)
        .ok_or_else(|| TextError::NoPassageCapacity {
            qas_id: example.qas_id.clone(),
            max_seq_length: cfg.max_seq_length,
            question_len: question.len(),
        })?;
    let stride = cfg.doc_stride.min(capacity);

    let gold_answer = example
        .answers
        .first()
        .filter(|a| example.answer_is_consistent(a));

    let mut features = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + capacity).min(passage.len());
        let window = &passage[start..end];

        let mut input_ids = Vec::with_capacity(cfg.max_seq_length);
        let mut segment_ids = Vec::with_capacity(cfg.max_seq_length);
        input_ids.push(CLS_ID);
        segment_ids.push(0);
        for t in &question {
            input_ids.push(t.id);
            segment_ids.push(0);
        }
        let sep1_index = input_ids.len();
        input_ids.push(SEP_ID);
        segment_ids.push(0);

        let passage_start = input_ids.len();
        let mut token_to_orig = BTreeMap::new();
        for (offset, t) in window.iter().enumerate() {
            token_to_orig.insert(passage_start + offset, (t.start, t.end));
            input_ids.push(t.id);
            segment_ids.push(1);
        }
        let sep2_index = input_ids.len();
        input_ids.push(SEP_ID);
        segment_ids.push(1);

        let pad_start = input_ids.len();
        input_ids.resize(cfg.max_seq_length, PAD_ID);
        segment_ids.resize(cfg.max_seq_length, 0);

        let layout = SequenceLayout {
            cls_index: 0,
            question_range: 1..sep1_index,
            sep1_index,
            passage_range: passage_start..sep2_index,
            sep2_index,
            pad_range: pad_start..cfg.max_seq_length,
        };
        debug_assert!(layout.is_valid());

        let mut feature = Feature {
            qas_id: example.qas_id.clone(),
            window_index: features.len(),
            input_ids,
            segment_ids,
            layout,
            token_to_orig,
            gold_span: None,
        };
        if let Some(answer) = gold_answer {
            feature.gold_span = map_answer_span(&feature, answer.answer_start, &answer.text);
        }
        features.push(feature);

        if start + capacity >= passage.len() {
            break;
        }
        start += stride;
    }

    Ok(Featurized { features, warnings })
}

/// Smallest token interval of this window whose character spans cover the
/// gold answer span, or `None` when the answer is not fully inside it.
pub fn map_answer_span(
    feature: &Feature,
    answer_start: usize,
    answer_text: &str,
) -> Option<(usize, usize)> {
    let gold_end = answer_start + answer_text.chars().count();
    let mut start_tok = None;
    let mut end_tok = None;
    for (&pos, &(s, e)) in &feature.token_to_orig {
        if s <= answer_start {
            start_tok = Some(pos); // last such token wins
        }
        if e >= gold_end && end_tok.is_none() {
            end_tok = Some(pos); // first such token wins
        }
    }
    match (start_tok, end_tok) {
        (Some(s), Some(e)) if s <= e => Some((s, e)),
        _ => None,
    }
}
