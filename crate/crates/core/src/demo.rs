//! One-command end-to-end pipeline on the synthetic corpus: train, decode
//! the baseline, sweep every layer/zone cell, collect results, render the
//! heatmap.

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use crate::harness::{
    baseline_prediction_path, collect_results, run_ablation, HarnessError, Metric, SweepPlan,
};
use crate::metrics::{evaluate, MetricsError, MetricsReport, PredictionSet};
use crate::model::{ModelConfig, ModelError, ZoneSpec};
use crate::synth::{generate_corpus, SynthConfig};
use crate::text::{build_vocab, featurize, Feature, FeaturizeConfig, SquadExample, TextError};
use crate::train::{loss_trace_csv, save_checkpoint, train, TrainConfig, TrainError};
use crate::viz::{render_heatmap, HeatmapSpec, VizError};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub synth: SynthConfig,
    pub model: DemoModel,
    pub epochs: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Model geometry for the demo (vocab size is filled in after building the
/// vocabulary).
#[derive(Debug, Clone, Copy)]
pub struct DemoModel {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_length: usize,
}

impl DemoConfig {
    pub fn new(out_dir: PathBuf, seed: u64) -> Self {
        Self {
            out_dir,
            seed,
            workers: 1,
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            model: DemoModel {
                num_layers: 4,
                num_heads: 4,
                d_model: 64,
                d_ff: 256,
                max_seq_length: 32,
            },
            epochs: 12.0,
            learning_rate: 1e-3,
            batch_size: 16,
        }
    }
}

pub struct DemoReport {
    pub baseline: MetricsReport,
    pub dev_questions: usize,
    pub train_features: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub results_csv_path: PathBuf,
    pub heatmap_path: PathBuf,
    pub prediction_dir: PathBuf,
}

fn featurize_all(
    examples: &[SquadExample],
    vocab: &crate::text::Vocab,
    cfg: &FeaturizeConfig,
) -> Result<Vec<Feature>, TextError> {
    let mut features = Vec::new();
    for ex in examples {
        features.extend(featurize(ex, vocab, cfg)?.features);
    }
    Ok(features)
}

/// Run the whole pipeline under `out_dir`; every artifact the protocol
/// produces ends up on disk.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport, DemoError> {
    let data_dir = cfg.out_dir.join("data");
    fs::create_dir_all(&data_dir)?;

    let (train_json, dev_json) = generate_corpus(&cfg.synth);
    fs::write(
        data_dir.join("train.json"),
        serde_json::to_string_pretty(&train_json)?,
    )?;
    fs::write(
        data_dir.join("dev.json"),
        serde_json::to_string_pretty(&dev_json)?,
    )?;

    let train_examples = crate::text::load_squad_value(&train_json)?;
    let dev_examples = crate::text::load_squad_value(&dev_json)?;

    let corpus: Vec<&str> = train_examples
        .iter()
        .flat_map(|ex| [ex.context.as_str(), ex.question.as_str()])
        .collect();
    let vocab = build_vocab(corpus, 256)?;

    let fcfg = FeaturizeConfig {
        max_seq_length: cfg.model.max_seq_length,
        doc_stride: 16,
        max_query_tokens: 8,
    };
    let train_features = featurize_all(&train_examples, &vocab, &fcfg)?;
    let dev_features = featurize_all(&dev_examples, &vocab, &fcfg)?;

    let model_config = ModelConfig {
        num_layers: cfg.model.num_layers,
        num_heads: cfg.model.num_heads,
        d_model: cfg.model.d_model,
        d_ff: cfg.model.d_ff,
        vocab_size: vocab.len(),
        max_positions: cfg.model.max_seq_length,
    };
    let train_config = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        max_steps: None,
    };
    let outcome = train(&train_features, &vocab, &model_config, &train_config)?;
    let checkpoint_path = cfg.out_dir.join("model.ckpt");
    save_checkpoint(&outcome.checkpoint, &checkpoint_path)?;
    fs::write(
        cfg.out_dir.join("loss.csv"),
        loss_trace_csv(&outcome.loss_trace),
    )?;

    // baseline decode + official-style metrics
    let baseline_preds: PredictionSet = crate::harness::decode_predictions(
        &outcome.checkpoint,
        &dev_examples,
        &dev_features,
        &ZoneSpec::baseline(),
        &crate::harness::DecodeConfig::default(),
    )?;
    fs::write(
        baseline_prediction_path(&cfg.out_dir),
        serde_json::to_vec(&baseline_preds)?,
    )?;
    let baseline = evaluate(&dev_examples, &baseline_preds)?;
    fs::write(cfg.out_dir.join("metrics.json"), baseline.to_json())?;

    // layer-by-zone sweep
    let prediction_dir = cfg.out_dir.join("prediction");
    let plan = SweepPlan::full(model_config.num_layers, Metric::Em);
    run_ablation(
        &outcome.checkpoint,
        &dev_examples,
        &dev_features,
        &plan,
        &prediction_dir,
        cfg.workers,
        false,
    )?;

    let table = collect_results(&prediction_dir, &dev_examples, false, None)?;
    let results_csv_path = cfg.out_dir.join("results.csv");
    table.write_csv(&results_csv_path)?;

    let heatmap_path = cfg.out_dir.join("squad.svg");
    let svg = render_heatmap(&HeatmapSpec::new(table, baseline.exact))?;
    fs::write(&heatmap_path, svg)?;

    let final_loss = outcome.loss_trace.last().map_or(f64::NAN, |(_, l)| *l);
    Ok(DemoReport {
        baseline,
        dev_questions: dev_examples.len(),
        train_features: train_features.len(),
        steps: outcome.checkpoint.metadata.steps,
        final_loss,
        checkpoint_path,
        results_csv_path,
        heatmap_path,
        prediction_dir,
    })
}
