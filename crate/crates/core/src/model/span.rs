//! Span-extraction head and best-span decoding.

use crate::tensor::{Graph, Tensor, Var, DROP_SENTINEL};
use crate::text::{Feature, SequenceLayout};

use super::encoder::ParamVars;
use super::ModelError;

/// One decoded answer candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub text: String,
    /// Start/end token positions in the sequence, inclusive.
    pub start: usize,
    pub end: usize,
    /// `start_logit + end_logit`.
    pub score: f64,
    pub window_index: usize,
}

/// Project hidden states to per-position start/end logits, forcing every
/// non-passage position to the drop sentinel.
pub fn span_logits(
    g: &mut Graph,
    params: &ParamVars,
    hidden: Var,
    layout: &SequenceLayout,
) -> Result<(Var, Var), ModelError> {
    let n = g.value(hidden).shape()[0];
    let mut sentinel = Tensor::filled(vec![n], DROP_SENTINEL);
    for i in layout.passage_range.clone() {
        sentinel.data_mut()[i] = 0.0;
    }

    let mut project = |w: &str, b: &str| -> Result<Var, ModelError> {
        let col = g.matmul(hidden, params.get(w)?)?;
        let biased = g.add_bias(col, params.get(b)?)?;
        let flat = g.reshape(biased, vec![n])?;
        let mask = g.constant(sentinel.clone());
        Ok(g.add(flat, mask)?)
    };

    let start = project("span.w_start", "span.b_start")?;
    let end = project("span.w_end", "span.b_end")?;
    Ok((start, end))
}

/// Enumerate all valid (start, end) pairs in the passage and rank them by
/// `start_logit + end_logit`, ties to the smaller start then smaller end.
pub fn predict_span(
    start_logits: &[f64],
    end_logits: &[f64],
    feature: &Feature,
    context: &str,
    max_answer_length: usize,
    n_best: usize,
) -> Result<Vec<SpanPrediction>, ModelError> {
    if max_answer_length == 0 || n_best == 0 {
        return Err(ModelError::Decode(
            "max_answer_length and n_best must be at least 1".into(),
        ));
    }
    let passage = feature.layout.passage_range.clone();
    let mut candidates = Vec::new();
    for s in passage.clone() {
        let e_end = (s + max_answer_length).min(passage.end);
        for e in s..e_end {
            candidates.push((s, e, start_logits[s] + end_logits[e]));
        }
    }
    if candidates.is_empty() {
        return Err(ModelError::NoValidSpan);
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    candidates.truncate(n_best);

    let chars: Vec<char> = context.chars().collect();
    let mut out = Vec::with_capacity(candidates.len());
    for (s, e, score) in candidates {
        let &(cs, _) = feature
            .token_to_orig
            .get(&s)
            .ok_or(ModelError::NoValidSpan)?;
        let &(_, ce) = feature
            .token_to_orig
            .get(&e)
            .ok_or(ModelError::NoValidSpan)?;
        out.push(SpanPrediction {
            text: chars[cs..ce].iter().collect(),
            start: s,
            end: e,
            score,
            window_index: feature.window_index,
        });
    }
    Ok(out)
}

/// Across the windows of one question, the globally best-scoring span wins;
/// ties go to the earlier window, then the earlier span.
pub fn best_prediction(predictions: Vec<SpanPrediction>) -> Option<SpanPrediction> {
    predictions.into_iter().min_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.window_index.cmp(&b.window_index))
            .then_with(|| a.start.cmp(&b.start))
            .then_with(|| a.end.cmp(&b.end))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::bind_params;
    use crate::text::{build_vocab, featurize, FeaturizeConfig, SquadExample};
    use std::collections::BTreeMap;

    fn feature_for(context: &str) -> (Feature, String) {
        let ex = SquadExample {
            qas_id: "q".into(),
            question: "what".into(),
            context: context.into(),
            answers: vec![],
        };
        let vocab = build_vocab([context, "what"], 1000).unwrap();
        let f = featurize(
            &ex,
            &vocab,
            &FeaturizeConfig {
                max_seq_length: 32,
                doc_stride: 16,
                max_query_tokens: 4,
            },
        )
        .unwrap()
        .features
        .remove(0);
        (f, ex.context)
    }

    fn logits_with_peaks(n: usize, peak: usize, value: f64) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[peak] = value;
        v
    }

    #[test]
    fn peak_start_and_end_decode_to_that_span() {
        let (f, ctx) = feature_for("w0 w1 w2 w3 w4 w5 w6 w7");
        let n = f.input_ids.len();
        let base = f.layout.passage_range.start;
        let start_logits = logits_with_peaks(n, base + 3, 5.0);
        let end_logits = logits_with_peaks(n, base + 5, 5.0);
        let preds = predict_span(&start_logits, &end_logits, &f, &ctx, 10, 1).unwrap();
        assert_eq!((preds[0].start, preds[0].end), (base + 3, base + 5));
        assert_eq!(preds[0].text, "w3 w4 w5");
    }

    #[test]
    fn all_equal_logits_fall_back_to_first_passage_token() {
        let (f, ctx) = feature_for("w0 w1 w2 w3");
        let n = f.input_ids.len();
        let preds = predict_span(&vec![0.0; n], &vec![0.0; n], &f, &ctx, 30, 1).unwrap();
        let first = f.layout.passage_range.start;
        assert_eq!((preds[0].start, preds[0].end), (first, first));
    }

    #[test]
    fn ranking_matches_brute_force_enumeration() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let (f, ctx) = feature_for("w0 w1 w2 w3 w4 w5");
        let n = f.input_ids.len();
        let mut rng = StdRng::seed_from_u64(99);
        for max_len in [1usize, 2, 4, 30] {
            let sl: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let el: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();

            let mut brute: Vec<(usize, usize, f64)> = Vec::new();
            for s in f.layout.passage_range.clone() {
                for e in s..f.layout.passage_range.end {
                    if e < s + max_len {
                        brute.push((s, e, sl[s] + el[e]));
                    }
                }
            }
            brute.sort_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then_with(|| a.0.cmp(&b.0))
                    .then_with(|| a.1.cmp(&b.1))
            });

            let preds = predict_span(&sl, &el, &f, &ctx, max_len, brute.len()).unwrap();
            let got: Vec<(usize, usize)> = preds.iter().map(|p| (p.start, p.end)).collect();
            let want: Vec<(usize, usize)> = brute.iter().map(|c| (c.0, c.1)).collect();
            assert_eq!(got, want, "max_len {max_len}");
        }
    }

    #[test]
    fn empty_passage_candidates_are_rejected() {
        let (mut f, ctx) = feature_for("w0 w1");
        f.layout.passage_range = f.layout.passage_range.start..f.layout.passage_range.start;
        let n = f.input_ids.len();
        assert!(matches!(
            predict_span(&vec![0.0; n], &vec![0.0; n], &f, &ctx, 5, 1),
            Err(ModelError::NoValidSpan)
        ));
    }

    #[test]
    fn zero_decode_args_are_rejected() {
        let (f, ctx) = feature_for("w0 w1");
        let n = f.input_ids.len();
        assert!(predict_span(&vec![0.0; n], &vec![0.0; n], &f, &ctx, 0, 1).is_err());
        assert!(predict_span(&vec![0.0; n], &vec![0.0; n], &f, &ctx, 5, 0).is_err());
    }

    #[test]
    fn best_prediction_prefers_score_then_window() {
        let p = |score: f64, window_index: usize| SpanPrediction {
            text: String::new(),
            start: 0,
            end: 0,
            score,
            window_index,
        };
        let best = best_prediction(vec![p(1.0, 2), p(3.0, 1), p(3.0, 0)]).unwrap();
        assert_eq!((best.score, best.window_index), (3.0, 0));
        assert!(best_prediction(vec![]).is_none());
    }

    fn head_params(d: usize, w_start: Vec<f64>, b_start: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([
            ("span.w_start".to_string(), Tensor::from_vec(vec![d, 1], w_start).unwrap()),
            ("span.b_start".to_string(), Tensor::vector(&[b_start])),
            ("span.w_end".to_string(), Tensor::zeros(vec![d, 1])),
            ("span.b_end".to_string(), Tensor::vector(&[0.0])),
        ])
    }

    #[test]
    fn zero_head_weights_give_equal_logits_and_tie_rule_applies() {
        let (f, ctx) = feature_for("w0 w1 w2");
        let n = f.input_ids.len();
        let d = 4;
        let params = head_params(d, vec![0.0; d], 0.0);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let hidden = g.constant(Tensor::filled(vec![n, d], 0.37));
        let (sv, ev) = span_logits(&mut g, &vars, hidden, &f.layout).unwrap();
        let sl = g.value(sv).data().to_vec();
        let el = g.value(ev).data().to_vec();
        for i in f.layout.passage_range.clone() {
            assert_eq!(sl[i], sl[f.layout.passage_range.start]);
        }
        let preds = predict_span(&sl, &el, &f, &ctx, 30, 1).unwrap();
        let first = f.layout.passage_range.start;
        assert_eq!((preds[0].start, preds[0].end), (first, first));
    }

    #[test]
    fn hand_built_weights_select_a_unique_argmax() {
        let (f, _ctx) = feature_for("w0 w1 w2 w3 w4 w5");
        let n = f.input_ids.len();
        let d = 2;
        // hidden row i = [i, 1]; w_start = [1, 0] makes logit i = i, so the
        // last passage position wins; bump position base+2 by the bias trick
        let mut hidden_data = Vec::new();
        for i in 0..n {
            hidden_data.push(if i == f.layout.passage_range.start + 2 { 100.0 } else { i as f64 });
            hidden_data.push(1.0);
        }
        let params = head_params(d, vec![1.0, 0.0], 0.0);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let hidden = g.constant(Tensor::from_vec(vec![n, d], hidden_data).unwrap());
        let (sv, _) = span_logits(&mut g, &vars, hidden, &f.layout).unwrap();
        let sl = g.value(sv).data();
        let argmax = sl
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, f.layout.passage_range.start + 2);
    }

    #[test]
    fn non_passage_positions_carry_the_sentinel() {
        let (f, _ctx) = feature_for("w0 w1 w2");
        let n = f.input_ids.len();
        let d = 3;
        let params = head_params(d, vec![0.5; d], 0.1);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let hidden = g.constant(Tensor::filled(vec![n, d], 1.0));
        let (sv, ev) = span_logits(&mut g, &vars, hidden, &f.layout).unwrap();
        for logits in [g.value(sv).data(), g.value(ev).data()] {
            for i in 0..n {
                if f.layout.passage_range.contains(&i) {
                    assert!(logits[i] > DROP_SENTINEL / 2.0);
                } else {
                    assert!(logits[i] <= DROP_SENTINEL / 2.0, "position {i}");
                }
            }
        }
    }
}
