//! Scratch calibration harness for the synthetic demo task.

use attnzone::harness::{decode_predictions, DecodeConfig};
use attnzone::metrics::evaluate;
use attnzone::model::{ModelConfig, ZoneSpec};
use attnzone::synth::{generate_corpus, SynthConfig};
use attnzone::text::{build_vocab, featurize, FeaturizeConfig};
use attnzone::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, default: f64| args.get(i).map(|s| s.parse().unwrap()).unwrap_or(default);
    let epochs = get(1, 12.0);
    let lr = get(2, 1e-3);
    let d_model = get(3, 64.0) as usize;
    let questions = get(4, 300.0) as usize;
    let num_layers = get(5, 4.0) as usize;
    let batch = get(6, 16.0) as usize;
    let seed = get(7, 42.0) as u64;
    let pairs = get(8, 4.0) as usize;
    let max_seq = get(9, 32.0) as usize;

    let synth = SynthConfig {
        seed,
        num_train_questions: questions,
        num_dev_questions: 60,
        min_pairs: pairs.saturating_sub(1).max(2),
        max_pairs: pairs,
        ..SynthConfig::default()
    };
    let (train_json, dev_json) = generate_corpus(&synth);
    let train_ex = attnzone::text::load_squad_value(&train_json).unwrap();
    let dev_ex = attnzone::text::load_squad_value(&dev_json).unwrap();
    let corpus: Vec<&str> = train_ex
        .iter()
        .flat_map(|e| [e.context.as_str(), e.question.as_str()])
        .collect();
    let vocab = build_vocab(corpus, 256).unwrap();
    let fcfg = FeaturizeConfig {
        max_seq_length: 32,
        doc_stride: 16,
        max_query_tokens: 8,
    };
    let feats: Vec<_> = train_ex
        .iter()
        .flat_map(|e| featurize(e, &vocab, &fcfg).unwrap().features)
        .collect();
    let dev_feats: Vec<_> = dev_ex
        .iter()
        .flat_map(|e| featurize(e, &vocab, &fcfg).unwrap().features)
        .collect();
    let model = ModelConfig {
        num_layers,
        num_heads: 4,
        d_model,
        d_ff: d_model * 4,
        vocab_size: vocab.len(),
        max_positions: 32,
    };
    let tcfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        seed,
        max_steps: None,
    };
    let t0 = std::time::Instant::now();
    let out = train(&feats, &vocab, &model, &tcfg).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let trace = &out.loss_trace;
    for (s, l) in trace.iter().step_by(trace.len().max(20) / 20) {
        println!("step {s:5}  loss {l:.4}");
    }
    let preds = decode_predictions(
        &out.checkpoint,
        &dev_ex,
        &dev_feats,
        &ZoneSpec::baseline(),
        &DecodeConfig::default(),
    )
    .unwrap();
    let report = evaluate(&dev_ex, &preds).unwrap();
    println!(
        "epochs={epochs} lr={lr} d={d_model} L={num_layers} q={questions} batch={batch} seed={seed} | steps={} train={train_secs:.1}s EM={:.3} F1={:.3} last_loss={:.4}",
        out.checkpoint.metadata.steps,
        report.exact,
        report.f1,
        trace.last().unwrap().1
    );
}
