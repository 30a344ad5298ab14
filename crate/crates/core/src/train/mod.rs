//! Span-loss fine-tuning with deterministic seeding and checkpointing.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    TrainMetadata,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    bind_params, encode, parameter_specs, span_logits, ModelConfig, ModelError, ParamKind,
    ZoneSpec,
};
use crate::tensor::{AdamHyper, AdamState, Graph, Tensor, TensorError, Var};
use crate::text::{Feature, Vocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trainable features: every feature lacks a gold span")]
    NoTrainableFeatures,
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
}

/// Fine-tuning knobs. Paper-scale batch size is 64; the desk default of 16
/// keeps one-core runs short. No warmup or decay: the learning rate is
/// constant for the whole run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hard cap on gradient steps; `None` means the epoch count decides.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3.0,
            batch_size: 16,
            learning_rate: 3e-5,
            seed: 42,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.epochs > 0.0) {
            return Err(TrainError::Config(format!(
                "epochs must be positive, got {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mean of the start and end cross-entropies.
pub fn span_loss(
    g: &mut Graph,
    start_logits: Var,
    end_logits: Var,
    gold_start: usize,
    gold_end: usize,
) -> Result<Var, TensorError> {
    let ce_start = g.cross_entropy(start_logits, gold_start)?;
    let ce_end = g.cross_entropy(end_logits, gold_end)?;
    let total = g.add(ce_start, ce_end)?;
    Ok(g.scale(total, 0.5))
}

const INIT_STD: f64 = 0.02;

/// Truncated normal weights (resampled beyond two standard deviations),
/// zero biases and betas, unit gammas.
pub fn init_params(config: &ModelConfig, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let mut truncated_normal = || loop {
        // Box-Muller; the pair's second value is discarded to keep draws
        // independent of tensor boundaries.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * INIT_STD;
        }
    };
    parameter_specs(config)
        .into_iter()
        .map(|(name, shape, kind)| {
            let n: usize = shape.iter().product();
            let data = match kind {
                ParamKind::Weight => (0..n).map(|_| truncated_normal()).collect(),
                ParamKind::Bias => vec![0.0; n],
                ParamKind::Gamma => vec![1.0; n],
            };
            (name, Tensor::from_vec(shape, data).expect("spec shapes"))
        })
        .collect()
}

/// Training result: the final checkpoint plus the per-step loss trace.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub loss_trace: Vec<(u64, f64)>,
}

/// Fine-tune from scratch on the gold-labeled features.
///
/// Fully deterministic for a given seed: initialization, shuffling, and
/// every numeric step replay identically.
pub fn train(
    features: &[Feature],
    vocab: &Vocab,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    let usable: Vec<&Feature> = features.iter().filter(|f| f.gold_span.is_some()).collect();
    if usable.is_empty() {
        return Err(TrainError::NoTrainableFeatures);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut params = init_params(model_config, &mut rng);

    let batches_per_epoch = usable.len().div_ceil(train_config.batch_size);
    let mut total_steps =
        (train_config.epochs * batches_per_epoch as f64).round() as usize;
    if let Some(cap) = train_config.max_steps {
        total_steps = total_steps.min(cap);
    }

    let mut adam = AdamState::new(AdamHyper::with_learning_rate(train_config.learning_rate));
    let mut loss_trace = Vec::with_capacity(total_steps);
    let mut step = 0u64;
    let baseline = ZoneSpec::baseline();

    'epochs: loop {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(train_config.batch_size) {
            if step as usize >= total_steps {
                break 'epochs;
            }
            let mut g = Graph::new();
            let vars = bind_params(&mut g, &params);
            let mut losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let feature = usable[idx];
                let (gold_start, gold_end) = feature.gold_span.expect("filtered");
                let hidden = encode(&mut g, &vars, model_config, feature, &baseline)?;
                let (sl, el) = span_logits(&mut g, &vars, hidden, &feature.layout)?;
                losses.push(span_loss(&mut g, sl, el, gold_start, gold_end)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = g.add(total, l)?;
            }
            let batch_loss = g.scale(total, 1.0 / losses.len() as f64);
            let grads = g.backward(batch_loss)?;
            adam.update(&mut params, &grads.into_map())?;
            step += 1;
            loss_trace.push((step, g.value(batch_loss).data()[0]));
        }
        if step as usize >= total_steps {
            break;
        }
    }

    let checkpoint = Checkpoint {
        config: *model_config,
        params,
        vocab: vocab.clone(),
        metadata: TrainMetadata {
            seed: train_config.seed,
            steps: step,
        },
    };
    checkpoint.validate()?;
    Ok(TrainOutcome {
        checkpoint,
        loss_trace,
    })
}

/// Render the loss trace as `step,loss` CSV.
pub fn loss_trace_csv(trace: &[(u64, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in trace {
        out.push_str(&format!("{step},{loss}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab, featurize, FeaturizeConfig, SquadAnswer, SquadExample};

    fn tiny_model(vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 16,
            d_ff: 32,
            vocab_size: vocab.len(),
            max_positions: 24,
        }
    }

    fn labeled_features(vocab: &Vocab) -> Vec<Feature> {
        let contexts = [
            ("k1 is v1 . k2 is v2 .", "what is k1 ?", "v1", 6),
            ("k1 is v2 . k2 is v1 .", "what is k2 ?", "v1", 17),
            ("k2 is v1 . k1 is v2 .", "what is k1 ?", "v2", 17),
        ];
        let cfg = FeaturizeConfig {
            max_seq_length: 20,
            doc_stride: 8,
            max_query_tokens: 6,
        };
        contexts
            .iter()
            .enumerate()
            .flat_map(|(i, (ctx, q, ans, start))| {
                let ex = SquadExample {
                    qas_id: format!("q{i}"),
                    question: q.to_string(),
                    context: ctx.to_string(),
                    answers: vec![SquadAnswer {
                        text: ans.to_string(),
                        answer_start: *start,
                    }],
                };
                assert!(ex.training_usable(), "fixture offsets must be right");
                featurize(&ex, vocab, &cfg).unwrap().features
            })
            .collect()
    }

    fn corpus_vocab() -> Vocab {
        build_vocab(["k1 k2 is v1 v2 . what ?"], 64).unwrap()
    }

    #[test]
    fn span_loss_is_zero_when_gold_has_probability_one() {
        let mut g = Graph::new();
        let mut sl = vec![0.0; 6];
        sl[2] = 60.0;
        let mut el = vec![0.0; 6];
        el[3] = 60.0;
        let s = g.constant(Tensor::vector(&sl));
        let e = g.constant(Tensor::vector(&el));
        let loss = span_loss(&mut g, s, e, 2, 3).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);
    }

    #[test]
    fn span_loss_uniform_is_ln_n() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::zeros(vec![9]));
        let e = g.constant(Tensor::zeros(vec![9]));
        let loss = span_loss(&mut g, s, e, 1, 2).unwrap();
        assert!((g.value(loss).data()[0] - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn span_loss_matches_hand_computed_cross_entropies() {
        // independent computation: CE = ln(sum exp(l)) - l[gold]
        let sl = [0.3, -1.2, 2.0, 0.0];
        let el = [1.0, 0.5, -0.5, 0.25];
        let ce = |l: &[f64], gold: usize| {
            let lse = l.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - l[gold]
        };
        let expected = 0.5 * (ce(&sl, 2) + ce(&el, 1));
        let mut g = Graph::new();
        let s = g.constant(Tensor::vector(&sl));
        let e = g.constant(Tensor::vector(&el));
        let loss = span_loss(&mut g, s, e, 2, 1).unwrap();
        assert!((g.value(loss).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn span_loss_rejects_out_of_range_gold() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::zeros(vec![4]));
        let e = g.constant(Tensor::zeros(vec![4]));
        assert!(span_loss(&mut g, s, e, 4, 0).is_err());
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let vocab = corpus_vocab();
        let features = labeled_features(&vocab);
        let model = tiny_model(&vocab);
        let cfg = TrainConfig {
            max_steps: Some(0),
            ..TrainConfig::default()
        };
        let outcome = train(&features, &vocab, &model, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = init_params(&model, &mut rng);
        assert_eq!(outcome.checkpoint.params, init);
        assert_eq!(outcome.checkpoint.metadata.steps, 0);
        assert!(outcome.loss_trace.is_empty());
    }

    #[test]
    fn same_seed_gives_bit_identical_checkpoints() {
        let vocab = corpus_vocab();
        let features = labeled_features(&vocab);
        let model = tiny_model(&vocab);
        let cfg = TrainConfig {
            epochs: 2.0,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 1234,
            max_steps: None,
        };
        let a = train(&features, &vocab, &model, &cfg).unwrap();
        let b = train(&features, &vocab, &model, &cfg).unwrap();
        assert_eq!(
            checkpoint_to_bytes(&a.checkpoint).unwrap(),
            checkpoint_to_bytes(&b.checkpoint).unwrap()
        );
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn unlabeled_features_are_rejected() {
        let vocab = corpus_vocab();
        let mut features = labeled_features(&vocab);
        for f in &mut features {
            f.gold_span = None;
        }
        let model = tiny_model(&vocab);
        assert!(matches!(
            train(&features, &vocab, &model, &TrainConfig::default()),
            Err(TrainError::NoTrainableFeatures)
        ));
    }

    #[test]
    fn one_example_loss_is_mostly_non_increasing_at_lr_1e3() {
        let vocab = corpus_vocab();
        let features: Vec<Feature> = labeled_features(&vocab).into_iter().take(1).collect();
        let model = tiny_model(&vocab);
        let cfg = TrainConfig {
            epochs: 30.0,
            batch_size: 1,
            learning_rate: 1e-3,
            seed: 5,
            max_steps: None,
        };
        let outcome = train(&features, &vocab, &model, &cfg).unwrap();
        let losses: Vec<f64> = outcome.loss_trace.iter().map(|(_, l)| *l).collect();
        let decreasing = losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            decreasing as f64 >= 0.9 * (losses.len() - 1) as f64,
            "only {decreasing}/{} steps non-increasing: {losses:?}",
            losses.len() - 1
        );
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }
}
