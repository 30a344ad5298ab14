//! Transformer encoder forward pass over the autodiff graph.

use std::collections::BTreeMap;

use crate::tensor::{ops, Graph, Tensor, Var};
use crate::text::Feature;

use super::zones::{padding_mask, zone_mask, ZoneSpec};
use super::{ModelConfig, ModelError};

/// Layer-norm epsilon used everywhere in the encoder.
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
}

/// Names, shapes, and init kinds of every encoder + span-head parameter.
pub fn parameter_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>, ParamKind)> {
    use ParamKind::*;
    let d = config.d_model;
    let mut specs = vec![
        ("embeddings.token".into(), vec![config.vocab_size, d], Weight),
        ("embeddings.position".into(), vec![config.max_positions, d], Weight),
        ("embeddings.segment".into(), vec![2, d], Weight),
        ("embeddings.norm.gamma".into(), vec![d], Gamma),
        ("embeddings.norm.beta".into(), vec![d], Bias),
    ];
    for i in 0..config.num_layers {
        let p = |suffix: &str| format!("layer{i}.{suffix}");
        specs.extend([
            (p("attn.wq"), vec![d, d], Weight),
            (p("attn.bq"), vec![d], Bias),
            (p("attn.wk"), vec![d, d], Weight),
            (p("attn.bk"), vec![d], Bias),
            (p("attn.wv"), vec![d, d], Weight),
            (p("attn.bv"), vec![d], Bias),
            (p("attn.wo"), vec![d, d], Weight),
            (p("attn.bo"), vec![d], Bias),
            (p("attn.norm.gamma"), vec![d], Gamma),
            (p("attn.norm.beta"), vec![d], Bias),
            (p("ffn.w1"), vec![d, config.d_ff], Weight),
            (p("ffn.b1"), vec![config.d_ff], Bias),
            (p("ffn.w2"), vec![config.d_ff, d], Weight),
            (p("ffn.b2"), vec![d], Bias),
            (p("ffn.norm.gamma"), vec![d], Gamma),
            (p("ffn.norm.beta"), vec![d], Bias),
        ]);
    }
    specs.extend([
        ("span.w_start".into(), vec![d, 1], ParamKind::Weight),
        ("span.b_start".into(), vec![1], ParamKind::Bias),
        ("span.w_end".into(), vec![d, 1], ParamKind::Weight),
        ("span.b_end".into(), vec![1], ParamKind::Bias),
    ]);
    specs
}

/// Parameter tensors bound into a graph as named leaves.
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Wrap an existing name-to-var map (the vars must already be leaves of
    /// the graph the encoder will run on).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam { name: name.into() })
    }
}

/// Insert every parameter tensor into the graph as a named leaf.
pub fn bind_params(graph: &mut Graph, params: &BTreeMap<String, Tensor>) -> ParamVars {
    let vars = params
        .iter()
        .map(|(name, tensor)| (name.clone(), graph.leaf(name.clone(), tensor.clone())))
        .collect();
    ParamVars { vars }
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let xw = g.matmul(x, w)?;
    Ok(g.add_bias(xw, b)?)
}

/// One encoder layer: multi-head self-attention with an additive mask,
/// output projection, residual + layer norm, then the GELU feed-forward
/// sublayer with its own residual + layer norm. The same mask applies to
/// every head.
pub fn attention_layer(
    g: &mut Graph,
    x: Var,
    params: &ParamVars,
    layer: usize,
    config: &ModelConfig,
    mask: &Tensor,
) -> Result<Var, ModelError> {
    let p = |suffix: &str| format!("layer{layer}.{suffix}");
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let q = affine(g, x, params.get(&p("attn.wq"))?, params.get(&p("attn.bq"))?)?;
    let k = affine(g, x, params.get(&p("attn.wk"))?, params.get(&p("attn.bk"))?)?;
    let v = affine(g, x, params.get(&p("attn.wv"))?, params.get(&p("attn.bv"))?)?;

    let mut heads = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let raw = g.matmul(qh, kt)?;
        let scores = g.scale(raw, scale);
        let probs = g.masked_softmax(scores, mask)?;
        heads.push(g.matmul(probs, vh)?);
    }
    let ctx = g.concat_cols(&heads)?;
    let attn_out = affine(g, ctx, params.get(&p("attn.wo"))?, params.get(&p("attn.bo"))?)?;

    let res1 = g.add(x, attn_out)?;
    let h1 = g.layer_norm(
        res1,
        params.get(&p("attn.norm.gamma"))?,
        params.get(&p("attn.norm.beta"))?,
        LN_EPS,
    )?;

    let ff_in = affine(g, h1, params.get(&p("ffn.w1"))?, params.get(&p("ffn.b1"))?)?;
    let ff_act = g.gelu(ff_in);
    let ff_out = affine(g, ff_act, params.get(&p("ffn.w2"))?, params.get(&p("ffn.b2"))?)?;

    let res2 = g.add(h1, ff_out)?;
    Ok(g.layer_norm(
        res2,
        params.get(&p("ffn.norm.gamma"))?,
        params.get(&p("ffn.norm.beta"))?,
        LN_EPS,
    )?)
}

/// Encode one feature into `[n x d_model]` hidden states, injecting the
/// spec's zone mask into exactly the layers it selects.
pub fn encode(
    g: &mut Graph,
    params: &ParamVars,
    config: &ModelConfig,
    feature: &Feature,
    spec: &ZoneSpec,
) -> Result<Var, ModelError> {
    config.validate()?;
    let n = feature.input_ids.len();
    if n > config.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: n,
            max: config.max_positions,
        });
    }
    if let super::zones::LayerSelector::Layer(i) = spec.layers {
        if i >= config.num_layers {
            return Err(ModelError::LayerOutOfRange {
                layer: i,
                num_layers: config.num_layers,
            });
        }
    }
    for &id in &feature.input_ids {
        if id >= config.vocab_size {
            return Err(ModelError::TokenIdOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }
    }

    let tok = g.embed(params.get("embeddings.token")?, &feature.input_ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = g.embed(params.get("embeddings.position")?, &positions)?;
    let segments: Vec<usize> = feature.segment_ids.iter().map(|&s| s as usize).collect();
    let seg = g.embed(params.get("embeddings.segment")?, &segments)?;

    let tp = g.add(tok, pos)?;
    let emb = g.add(tp, seg)?;
    let mut x = g.layer_norm(
        emb,
        params.get("embeddings.norm.gamma")?,
        params.get("embeddings.norm.beta")?,
        LN_EPS,
    )?;

    let pad = padding_mask(&feature.layout);
    for layer in 0..config.num_layers {
        let zone = if spec.applies_to_layer(layer) {
            spec.zone
        } else {
            super::zones::Zone::None
        };
        let combined = ops::add(&zone_mask(&feature.layout, zone), &pad)?;
        x = attention_layer(g, x, params, layer, config, &combined)?;
    }
    Ok(x)
}

/// Per-head attention distributions of one layer on a given input, outside
/// any graph. A plain forward probe for inspecting what a mask does.
pub fn attention_distributions(
    params: &BTreeMap<String, Tensor>,
    config: &ModelConfig,
    layer: usize,
    x: &Tensor,
    mask: &Tensor,
) -> Result<Vec<Tensor>, ModelError> {
    let p = |suffix: &str| format!("layer{layer}.{suffix}");
    let get = |name: &str| {
        params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam { name: name.into() })
    };
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = ops::add_bias(&ops::matmul(x, get(&p("attn.wq"))?)?, get(&p("attn.bq"))?)?;
    let k = ops::add_bias(&ops::matmul(x, get(&p("attn.wk"))?)?, get(&p("attn.bk"))?)?;
    let mut probs = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let qh = ops::slice_cols(&q, h * dh, dh)?;
        let kh = ops::slice_cols(&k, h * dh, dh)?;
        let scores = ops::scale(&ops::matmul(&qh, &ops::transpose(&kh)?)?, scale);
        probs.push(ops::masked_softmax(&scores, mask)?);
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::zones::{LayerSelector, Zone};
    use crate::text::{build_vocab, featurize, FeaturizeConfig, SquadExample};

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size,
            max_positions: 16,
        }
    }

    fn random_params(config: &ModelConfig, seed: u64) -> BTreeMap<String, Tensor> {
        let mut rng = StdRng::seed_from_u64(seed);
        parameter_specs(config)
            .into_iter()
            .map(|(name, shape, kind)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match kind {
                    ParamKind::Gamma => (0..n).map(|_| 1.0 + rng.gen::<f64>() * 0.1).collect(),
                    _ => (0..n).map(|_| rng.gen::<f64>() * 0.2 - 0.1).collect(),
                };
                (name, Tensor::from_vec(shape, data).unwrap())
            })
            .collect()
    }

    fn demo_feature(vocab_size: usize) -> Feature {
        let ex = SquadExample {
            qas_id: "q".into(),
            question: "color sky".into(),
            context: "sky is blue here now".into(),
            answers: vec![],
        };
        let vocab = build_vocab(["color sky is blue here now"], vocab_size).unwrap();
        featurize(
            &ex,
            &vocab,
            &FeaturizeConfig {
                max_seq_length: 12,
                doc_stride: 8,
                max_query_tokens: 4,
            },
        )
        .unwrap()
        .features
        .remove(0)
    }

    fn encode_values(feature: &Feature, params: &BTreeMap<String, Tensor>, spec: ZoneSpec) -> Vec<u64> {
        let config = tiny_config(16);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, params);
        let out = encode(&mut g, &vars, &config, feature, &spec).unwrap();
        g.value(out).data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn none_spec_is_bit_identical_to_baseline() {
        let feature = demo_feature(16);
        let params = random_params(&tiny_config(16), 7);
        let a = encode_values(&feature, &params, ZoneSpec::baseline());
        let b = encode_values(
            &feature,
            &params,
            ZoneSpec {
                layers: LayerSelector::Layer(0),
                zone: Zone::None,
            },
        );
        assert_eq!(a, b);
    }

    #[test]
    fn masking_one_layer_changes_the_encoding() {
        let feature = demo_feature(16);
        let params = random_params(&tiny_config(16), 7);
        let base = encode_values(&feature, &params, ZoneSpec::baseline());
        let masked = encode_values(
            &feature,
            &params,
            ZoneSpec {
                layers: LayerSelector::Layer(0),
                zone: Zone::Q2,
            },
        );
        assert_ne!(base, masked);
    }

    #[test]
    fn every_layer_equals_composition_over_layers() {
        // Masking a zone in every layer is by definition the single forward
        // pass that applies the zone mask at each layer index.
        let feature = demo_feature(16);
        let config = tiny_config(16);
        let params = random_params(&config, 11);
        let spec = ZoneSpec {
            layers: LayerSelector::EveryLayer,
            zone: Zone::Q2P,
        };

        let via_spec = encode_values(&feature, &params, spec);

        // manual composition: run the layers one by one, always masking
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let n = feature.input_ids.len();
        let tok = g.embed(vars.get("embeddings.token").unwrap(), &feature.input_ids).unwrap();
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.embed(vars.get("embeddings.position").unwrap(), &positions).unwrap();
        let segments: Vec<usize> = feature.segment_ids.iter().map(|&s| s as usize).collect();
        let seg = g.embed(vars.get("embeddings.segment").unwrap(), &segments).unwrap();
        let tp = g.add(tok, pos).unwrap();
        let emb = g.add(tp, seg).unwrap();
        let mut x = g
            .layer_norm(
                emb,
                vars.get("embeddings.norm.gamma").unwrap(),
                vars.get("embeddings.norm.beta").unwrap(),
                LN_EPS,
            )
            .unwrap();
        let pad = padding_mask(&feature.layout);
        for layer in 0..config.num_layers {
            let combined = ops::add(&zone_mask(&feature.layout, Zone::Q2P), &pad).unwrap();
            x = attention_layer(&mut g, x, &vars, layer, &config, &combined).unwrap();
        }
        let manual: Vec<u64> = g.value(x).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(via_spec, manual);
    }

    #[test]
    fn all_zone_reduces_attention_sublayer_to_norm_of_input() {
        // With every connection dropped the context vectors are zero, so the
        // attention sublayer contributes only its output bias.
        let config = tiny_config(16);
        let params = random_params(&config, 3);
        let feature = demo_feature(16);
        let n = feature.input_ids.len();
        let mut rng = StdRng::seed_from_u64(5);
        let x = Tensor::from_vec(
            vec![n, config.d_model],
            (0..n * config.d_model).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();

        let mask = ops::add(
            &zone_mask(&feature.layout, Zone::All),
            &padding_mask(&feature.layout),
        )
        .unwrap();

        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let xv = g.constant(x.clone());
        let out = attention_layer(&mut g, xv, &vars, 0, &config, &mask).unwrap();

        // manual path: h1 = LN(x + bo) then the FFN sublayer
        let bo = &params["layer0.attn.bo"];
        let h1 = ops::layer_norm(
            &ops::add_bias(&x, bo).unwrap(),
            &params["layer0.attn.norm.gamma"],
            &params["layer0.attn.norm.beta"],
            LN_EPS,
        )
        .unwrap();
        let ff = ops::add_bias(
            &ops::matmul(
                &ops::gelu(&ops::add_bias(&ops::matmul(&h1, &params["layer0.ffn.w1"]).unwrap(), &params["layer0.ffn.b1"]).unwrap()),
                &params["layer0.ffn.w2"],
            )
            .unwrap(),
            &params["layer0.ffn.b2"],
        )
        .unwrap();
        let manual = ops::layer_norm(
            &ops::add(&h1, &ff).unwrap(),
            &params["layer0.ffn.norm.gamma"],
            &params["layer0.ffn.norm.beta"],
            LN_EPS,
        )
        .unwrap();

        assert_eq!(g.value(out), &manual);
    }

    #[test]
    fn masking_q2_leaves_passage_row_distributions_unchanged() {
        let config = tiny_config(16);
        let params = random_params(&config, 13);
        let feature = demo_feature(16);
        let n = feature.input_ids.len();
        let mut rng = StdRng::seed_from_u64(17);
        let x = Tensor::from_vec(
            vec![n, config.d_model],
            (0..n * config.d_model).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let pad = padding_mask(&feature.layout);
        let base_mask = ops::add(&zone_mask(&feature.layout, Zone::None), &pad).unwrap();
        let q2_mask = ops::add(&zone_mask(&feature.layout, Zone::Q2), &pad).unwrap();

        let base = attention_distributions(&params, &config, 0, &x, &base_mask).unwrap();
        let masked = attention_distributions(&params, &config, 0, &x, &q2_mask).unwrap();
        for (pb, pm) in base.iter().zip(&masked) {
            for row in feature.layout.passage_block() {
                for j in 0..n {
                    assert_eq!(pb.at2(row, j), pm.at2(row, j), "row {row} col {j}");
                }
            }
            // and the question rows did change
            let qrow = feature.layout.cls_index;
            assert_ne!(
                (0..n).map(|j| pb.at2(qrow, j)).collect::<Vec<_>>(),
                (0..n).map(|j| pm.at2(qrow, j)).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn out_of_vocab_id_is_rejected() {
        let config = tiny_config(4);
        let params = random_params(&config, 1);
        let mut feature = demo_feature(16);
        feature.input_ids[2] = 99;
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let err = encode(&mut g, &vars, &config, &feature, &ZoneSpec::baseline());
        assert!(matches!(err, Err(ModelError::TokenIdOutOfRange { .. })));
    }

    #[test]
    fn mask_layer_out_of_range_is_rejected() {
        let config = tiny_config(16);
        let params = random_params(&config, 1);
        let feature = demo_feature(16);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &params);
        let spec = ZoneSpec {
            layers: LayerSelector::Layer(2),
            zone: Zone::Q2,
        };
        assert!(matches!(
            encode(&mut g, &vars, &config, &feature, &spec),
            Err(ModelError::LayerOutOfRange { .. })
        ));
    }
}
