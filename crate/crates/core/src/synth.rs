//! Synthetic key-value reading-comprehension corpus.
//!
//! Passages read `k07 is v31 . k02 is v18 .` and questions ask
//! `what is k07 ?`; the gold answer is the paired value token. Small enough
//! to train from scratch in minutes, structured enough that attention
//! between question and passage actually matters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_train_questions: usize,
    pub num_dev_questions: usize,
    pub key_pool: usize,
    pub value_pool: usize,
    pub min_pairs: usize,
    pub max_pairs: usize,
    pub questions_per_passage: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            num_train_questions: 300,
            num_dev_questions: 60,
            key_pool: 24,
            value_pool: 24,
            min_pairs: 3,
            max_pairs: 5,
            questions_per_passage: 2,
        }
    }
}

fn key_token(i: usize) -> String {
    format!("k{i:02}")
}

fn value_token(i: usize) -> String {
    format!("v{i:02}")
}

fn generate_split(rng: &mut ChaCha8Rng, cfg: &SynthConfig, num_questions: usize, id_prefix: &str) -> Value {
    let mut paragraphs = Vec::new();
    let mut question_count = 0;
    let mut paragraph_index = 0;
    while question_count < num_questions {
        let num_pairs = rng.gen_range(cfg.min_pairs..=cfg.max_pairs);
        let mut keys: Vec<usize> = (0..cfg.key_pool).collect();
        keys.shuffle(rng);
        keys.truncate(num_pairs);
        let mut values: Vec<usize> = (0..cfg.value_pool).collect();
        values.shuffle(rng);
        values.truncate(num_pairs);

        let mut context = String::new();
        let mut value_offsets = Vec::with_capacity(num_pairs);
        for (k, v) in keys.iter().zip(&values) {
            context.push_str(&key_token(*k));
            context.push_str(" is ");
            value_offsets.push(context.chars().count());
            context.push_str(&value_token(*v));
            context.push_str(" . ");
        }
        let context = context.trim_end().to_string();

        let mut ask_order: Vec<usize> = (0..num_pairs).collect();
        ask_order.shuffle(rng);
        let mut qas = Vec::new();
        for &slot in ask_order.iter().take(cfg.questions_per_passage) {
            if question_count >= num_questions {
                break;
            }
            qas.push(json!({
                "id": format!("{id_prefix}{question_count:05}"),
                "question": format!("what is {} ?", key_token(keys[slot])),
                "answers": [{
                    "text": value_token(values[slot]),
                    "answer_start": value_offsets[slot],
                }],
            }));
            question_count += 1;
        }
        paragraphs.push(json!({
            "context": context,
            "qas": qas,
        }));
        paragraph_index += 1;
        assert!(paragraph_index < num_questions * 4, "generation must terminate");
    }
    json!({
        "version": "1.1",
        "data": [{
            "title": "synthetic key-value corpus",
            "paragraphs": paragraphs,
        }],
    })
}

/// Generate disjoint train/dev splits as SQuAD v1.1 JSON documents.
pub fn generate_corpus(cfg: &SynthConfig) -> (Value, Value) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = generate_split(&mut rng, cfg, cfg.num_train_questions, "train-");
    let dev = generate_split(&mut rng, cfg, cfg.num_dev_questions, "dev-");
    (train, dev)
}
