//! Finite-difference verification of every differentiable op and of the
//! full span-loss graph.

mod common;

use std::collections::BTreeMap;

use common::check_gradients;

use attnzone::model::{
    encode, span_logits, ModelConfig, ZoneSpec,
};
use attnzone::tensor::{Tensor, DROP_SENTINEL};
use attnzone::text::{build_vocab, featurize, FeaturizeConfig, SquadAnswer, SquadExample};
use attnzone::train::{init_params, span_loss};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn rand_tensor(rng: &mut StdRng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn params(entries: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[test]
fn matmul_gradients() {
    let mut rng = StdRng::seed_from_u64(1);
    for i in 0..INSTANCES {
        let (m, k, n) = (2 + i % 3, 1 + i % 4, 2 + i % 2);
        let p = params(vec![
            ("a", rand_tensor(&mut rng, vec![m, k])),
            ("b", rand_tensor(&mut rng, vec![k, n])),
        ]);
        check_gradients(&p, H, TOL, |g, vars| {
            let c = g.matmul(vars["a"], vars["b"]).unwrap();
            g.sum(c)
        });
    }
}

#[test]
fn add_mul_scale_bias_gradients() {
    let mut rng = StdRng::seed_from_u64(2);
    for i in 0..INSTANCES {
        let (m, n) = (1 + i % 4, 2 + i % 3);
        let p = params(vec![
            ("x", rand_tensor(&mut rng, vec![m, n])),
            ("y", rand_tensor(&mut rng, vec![m, n])),
            ("bias", rand_tensor(&mut rng, vec![n])),
        ]);
        check_gradients(&p, H, TOL, |g, vars| {
            let s = g.add(vars["x"], vars["y"]).unwrap();
            let b = g.add_bias(s, vars["bias"]).unwrap();
            let m = g.mul(b, vars["x"]).unwrap();
            let sc = g.scale(m, 0.37);
            g.sum(sc)
        });
    }
}

#[test]
fn transpose_reshape_slice_concat_gradients() {
    let mut rng = StdRng::seed_from_u64(3);
    for i in 0..INSTANCES {
        let (m, n) = (2 + i % 3, 4 + (i % 2) * 2);
        let p = params(vec![("x", rand_tensor(&mut rng, vec![m, n]))]);
        check_gradients(&p, H, TOL, |g, vars| {
            let t = g.transpose(vars["x"]).unwrap();
            let back = g.transpose(t).unwrap();
            let left = g.slice_cols(back, 0, n / 2).unwrap();
            let right = g.slice_cols(back, n / 2, n - n / 2).unwrap();
            let swapped = g.concat_cols(&[right, left]).unwrap();
            let flat = g.reshape(swapped, vec![m * n]).unwrap();
            let sq = g.mul(flat, flat).unwrap();
            g.sum(sq)
        });
    }
}

#[test]
fn gelu_gradients() {
    let mut rng = StdRng::seed_from_u64(4);
    for i in 0..INSTANCES {
        let n = 3 + i % 5;
        let p = params(vec![("x", rand_tensor(&mut rng, vec![n]))]);
        check_gradients(&p, H, TOL, |g, vars| {
            let a = g.gelu(vars["x"]);
            g.sum(a)
        });
    }
}

#[test]
fn masked_softmax_gradients() {
    let mut rng = StdRng::seed_from_u64(5);
    for i in 0..INSTANCES {
        let (rows, n) = (1 + i % 3, 4 + i % 3);
        let mut mask = Tensor::zeros(vec![rows, n]);
        for v in mask.data_mut().iter_mut() {
            if rng.gen::<f64>() < 0.3 {
                *v = DROP_SENTINEL;
            }
        }
        // one fully dropped row now and then
        if i % 4 == 0 {
            for j in 0..n {
                mask.data_mut()[j] = DROP_SENTINEL;
            }
        }
        let weights = rand_tensor(&mut rng, vec![rows, n]);
        let p = params(vec![("scores", rand_tensor(&mut rng, vec![rows, n]))]);
        let mask_c = mask.clone();
        let weights_c = weights.clone();
        check_gradients(&p, H, TOL, move |g, vars| {
            let probs = g.masked_softmax(vars["scores"], &mask_c).unwrap();
            let w = g.constant(weights_c.clone());
            let weighted = g.mul(probs, w).unwrap();
            g.sum(weighted)
        });
    }
}

#[test]
fn layer_norm_gradients() {
    let mut rng = StdRng::seed_from_u64(6);
    for i in 0..INSTANCES {
        let (rows, d) = (1 + i % 3, 3 + i % 4);
        let weights = rand_tensor(&mut rng, vec![rows, d]);
        let p = params(vec![
            ("x", rand_tensor(&mut rng, vec![rows, d])),
            ("gamma", rand_tensor(&mut rng, vec![d])),
            ("beta", rand_tensor(&mut rng, vec![d])),
        ]);
        let weights_c = weights.clone();
        check_gradients(&p, H, TOL, move |g, vars| {
            let y = g
                .layer_norm(vars["x"], vars["gamma"], vars["beta"], 1e-8)
                .unwrap();
            let w = g.constant(weights_c.clone());
            let weighted = g.mul(y, w).unwrap();
            g.sum(weighted)
        });
    }
}

#[test]
fn embed_gradients() {
    let mut rng = StdRng::seed_from_u64(7);
    for i in 0..INSTANCES {
        let (v, d) = (4 + i % 3, 2 + i % 3);
        let ids: Vec<usize> = (0..5).map(|_| rng.gen_range(0..v)).collect();
        let p = params(vec![("table", rand_tensor(&mut rng, vec![v, d]))]);
        let ids_c = ids.clone();
        check_gradients(&p, H, TOL, move |g, vars| {
            let e = g.embed(vars["table"], &ids_c).unwrap();
            let sq = g.mul(e, e).unwrap();
            g.sum(sq)
        });
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = StdRng::seed_from_u64(8);
    for i in 0..INSTANCES {
        let n = 3 + i % 6;
        let target = i % n;
        let p = params(vec![("logits", rand_tensor(&mut rng, vec![n]))]);
        check_gradients(&p, H, TOL, move |g, vars| {
            g.cross_entropy(vars["logits"], target).unwrap()
        });
    }
}

#[test]
fn random_three_layer_graph_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(9);
    for i in 0..INSTANCES {
        let d = 3 + i % 3;
        let p = params(vec![
            ("x", rand_tensor(&mut rng, vec![2, d])),
            ("w1", rand_tensor(&mut rng, vec![d, d])),
            ("b1", rand_tensor(&mut rng, vec![d])),
            ("w2", rand_tensor(&mut rng, vec![d, d])),
            ("b2", rand_tensor(&mut rng, vec![d])),
            ("w3", rand_tensor(&mut rng, vec![d, 1])),
        ]);
        check_gradients(&p, H, TOL, |g, vars| {
            let h1 = g.matmul(vars["x"], vars["w1"]).unwrap();
            let h1 = g.add_bias(h1, vars["b1"]).unwrap();
            let h1 = g.gelu(h1);
            let h2 = g.matmul(h1, vars["w2"]).unwrap();
            let h2 = g.add_bias(h2, vars["b2"]).unwrap();
            let h2 = g.gelu(h2);
            let out = g.matmul(h2, vars["w3"]).unwrap();
            g.sum(out)
        });
    }
}

/// Full model: embeddings -> zone-masked encoder -> span head -> span loss,
/// finite-differenced through every parameter on a miniature config.
#[test]
fn full_span_loss_graph_matches_finite_differences() {
    let ex = SquadExample {
        qas_id: "g".into(),
        question: "what is k1".into(),
        context: "k1 is v1 . k2 is v2".into(),
        answers: vec![SquadAnswer {
            text: "v1".into(),
            answer_start: 6,
        }],
    };
    assert!(ex.training_usable());
    let vocab = build_vocab([ex.context.as_str(), ex.question.as_str()], 32).unwrap();
    let feature = featurize(
        &ex,
        &vocab,
        &FeaturizeConfig {
            max_seq_length: 16,
            doc_stride: 8,
            max_query_tokens: 4,
        },
    )
    .unwrap()
    .features
    .remove(0);
    let (gs, ge) = feature.gold_span.expect("gold span in window");

    let config = ModelConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 6,
        d_ff: 8,
        vocab_size: vocab.len(),
        max_positions: 16,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = init_params(&config, &mut rng);
    // nudge the zero-initialized biases off zero so their gradients are
    // exercised at a generic point
    let mut jitter = StdRng::seed_from_u64(12);
    for t in p.values_mut() {
        for v in t.data_mut() {
            *v += jitter.gen::<f64>() * 0.05;
        }
    }

    let feature_c = feature.clone();
    let worst = check_gradients(&p, H, TOL, move |g, vars| {
        let pv = attnzone::model::ParamVars::from_vars(vars.clone());
        let hidden = encode(g, &pv, &config, &feature_c, &ZoneSpec::baseline()).unwrap();
        let (sl, el) = span_logits(g, &pv, hidden, &feature_c.layout).unwrap();
        span_loss(g, sl, el, gs, ge).unwrap()
    });
    println!("full-graph max relative error: {worst:.3e}");
}
