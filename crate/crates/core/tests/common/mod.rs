//! Shared test oracles: central finite differences for gradients and
//! brute-force span enumeration.

#![allow(dead_code)]

use std::collections::BTreeMap;

use attnzone::tensor::{Gradients, Graph, Tensor, Var};

/// Central finite-difference gradient of `forward` with respect to the
/// named input, perturbing one component at a time.
///
/// `forward` must rebuild the whole graph from the parameter map and return
/// the scalar loss value.
pub fn finite_difference_grad<F>(
    params: &BTreeMap<String, Tensor>,
    name: &str,
    h: f64,
    mut forward: F,
) -> Tensor
where
    F: FnMut(&BTreeMap<String, Tensor>) -> f64,
{
    let base = &params[name];
    let mut grad = Tensor::zeros(base.shape().to_vec());
    for i in 0..base.len() {
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[i] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[i] -= h;
        grad.data_mut()[i] = (forward(&plus) - forward(&minus)) / (2.0 * h);
    }
    grad
}

/// Max relative error between two gradients, with a small absolute floor so
/// exactly-zero gradients compare cleanly against finite-difference noise.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Run a graph-building closure, backprop from its scalar output, and check
/// every named leaf against central finite differences.
///
/// `build` gets the graph plus the bound leaf vars and returns the loss var.
pub fn check_gradients<F>(
    params: &BTreeMap<String, Tensor>,
    h: f64,
    tolerance: f64,
    mut build: F,
) -> f64
where
    F: FnMut(&mut Graph, &BTreeMap<String, Var>) -> Var,
{
    let mut run = |p: &BTreeMap<String, Tensor>| -> (f64, Option<Gradients>, bool) {
        let mut g = Graph::new();
        let vars: BTreeMap<String, Var> = p
            .iter()
            .map(|(name, tensor)| (name.clone(), g.leaf(name.clone(), tensor.clone())))
            .collect();
        let loss = build(&mut g, &vars);
        let value = g.value(loss).data()[0];
        (value, Some(g.backward(loss).unwrap()), true)
    };

    let (_, grads, _) = run(params);
    let grads = grads.unwrap();
    let mut worst = 0.0f64;
    for name in params.keys() {
        let analytic = grads.get(name).expect("gradient for every leaf");
        let numeric = finite_difference_grad(params, name, h, |p| run(p).0);
        let err = max_relative_error(analytic, &numeric);
        assert!(
            err < tolerance,
            "gradient of {name} off by {err:.3e} (tolerance {tolerance:.1e})\nanalytic: {:?}\nnumeric:  {:?}",
            analytic.data(),
            numeric.data()
        );
        worst = worst.max(err);
    }
    worst
}

/// Brute-force ranked span enumeration: every (start, end) pair inside the
/// passage with `end < start + max_answer_length`, sorted by summed logit
/// descending with ties to the smaller start then end.
pub fn brute_force_spans(
    start_logits: &[f64],
    end_logits: &[f64],
    passage: std::ops::Range<usize>,
    max_answer_length: usize,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for s in passage.clone() {
        for e in passage.clone() {
            if e >= s && e < s + max_answer_length {
                out.push((s, e, start_logits[s] + end_logits[e]));
            }
        }
    }
    out.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    out
}
