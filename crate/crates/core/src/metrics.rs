//! SQuAD v1.1 evaluation semantics: answer normalization, exact match,
//! bag-of-tokens F1, and the six-key metrics report.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::text::SquadExample;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid predictions JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("predictions must be a flat JSON object of qas_id to answer string")]
    NotAnObject,
    #[error("missing predictions for {count} question(s): {ids}")]
    MissingPredictions { count: usize, ids: String },
}

/// Map from qas_id to predicted answer string.
pub type PredictionSet = BTreeMap<String, String>;

/// Parse a `predictions.json` document (flat object of qas_id to answer).
pub fn load_predictions(json: &str) -> Result<PredictionSet, MetricsError> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let obj = value.as_object().ok_or(MetricsError::NotAnObject)?;
    let mut out = PredictionSet::new();
    for (k, v) in obj {
        let s = v.as_str().ok_or(MetricsError::NotAnObject)?;
        out.insert(k.clone(), s.to_string());
    }
    Ok(out)
}

/// Evaluation output record. Field order is the serialized key order; for
/// v1.1 data every question has an answer, so the `HasAns_*` values mirror
/// the overall ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub exact: f64,
    pub f1: f64,
    pub total: usize,
    #[serde(rename = "HasAns_exact")]
    pub has_ans_exact: f64,
    #[serde(rename = "HasAns_f1")]
    pub has_ans_f1: f64,
    #[serde(rename = "HasAns_total")]
    pub has_ans_total: usize,
}

impl MetricsReport {
    /// Single-line, full-precision JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Punctuation removed by normalization: the ASCII punctuation class of the
/// official evaluation script plus any character in Unicode category P.
///
/// | source                  | characters                          |
/// |-------------------------|-------------------------------------|
/// | ASCII punctuation class | `!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~`  |
/// | Unicode category P      | dashes, quotes, brackets, etc.      |
fn is_removed_punctuation(ch: char) -> bool {
    ch.is_ascii_punctuation() || ch.general_category_group() == GeneralCategoryGroup::Punctuation
}

fn article_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static regex"))
}

/// Lowercase, strip punctuation, drop the articles a/an/the as whole words,
/// and collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text.chars().flat_map(char::to_lowercase).collect();
    let no_punct: String = lowered
        .chars()
        .filter(|&c| !is_removed_punctuation(c))
        .collect();
    let no_articles = article_regex().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalized_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// 1 iff the normalized prediction equals some normalized gold.
pub fn exact_match(pred: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(pred);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

fn f1_single(pred_tokens: &[String], gold_tokens: &[String]) -> f64 {
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in gold_tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0i64;
    for t in pred_tokens {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best bag-of-tokens F1 over the gold answers, in `[0, 1]`.
pub fn f1_score(pred: &str, golds: &[String]) -> f64 {
    let pred_tokens = normalized_tokens(pred);
    golds
        .iter()
        .map(|g| f1_single(&pred_tokens, &normalized_tokens(g)))
        .fold(0.0, f64::max)
}

/// Score a prediction set against the dataset's gold answers.
pub fn evaluate(
    dataset: &[SquadExample],
    predictions: &PredictionSet,
) -> Result<MetricsReport, MetricsError> {
    let missing: Vec<&str> = dataset
        .iter()
        .filter(|ex| !predictions.contains_key(&ex.qas_id))
        .map(|ex| ex.qas_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions {
            count: missing.len(),
            ids: missing.join(", "),
        });
    }

    let total = dataset.len();
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    for ex in dataset {
        let pred = &predictions[&ex.qas_id];
        let golds: Vec<String> = ex.answers.iter().map(|a| a.text.clone()).collect();
        em_sum += f64::from(exact_match(pred, &golds));
        f1_sum += f1_score(pred, &golds);
    }
    let exact = 100.0 * em_sum / total as f64;
    let f1 = 100.0 * f1_sum / total as f64;
    Ok(MetricsReport {
        exact,
        f1,
        total,
        has_ans_exact: exact,
        has_ans_f1: f1,
        has_ans_total: total,
    })
}
