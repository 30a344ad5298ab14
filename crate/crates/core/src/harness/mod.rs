//! Layer-by-zone ablation sweeps: decode under each mask, write prediction
//! files, collect scores into results tables.

mod stats;

pub use stats::{average_runs, round3, stddev_of_difference, Metric, ResultsTable, CSV_HEADER};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{evaluate, load_predictions, MetricsError, PredictionSet};
use crate::model::{
    best_prediction, bind_params, encode, predict_span, span_logits, LayerSelector, ModelError,
    Zone, ZoneSpec,
};
use crate::tensor::Graph;
use crate::text::{Feature, SquadExample};
use crate::train::{Checkpoint, TrainError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing prediction file for layer {layer}, zone {zone}: {file}")]
    MissingCell {
        layer: String,
        zone: String,
        file: String,
    },
    #[error("no prediction files found in {dir} (expected predictions_layer0_all.json)")]
    EmptyDir { dir: String },
    #[error("output directory {dir} is not writable: {reason}")]
    Unwritable { dir: String, reason: String },
    #[error("results csv: {0}")]
    Csv(String),
    #[error("table shape mismatch: {0}")]
    TableMismatch(String),
    #[error("example {qas_id} referenced by a feature is missing from the dataset")]
    OrphanFeature { qas_id: String },
}

/// Decoding knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_answer_length: usize,
    pub n_best: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_answer_length: 30,
            n_best: 20,
        }
    }
}

/// Decode every question once under the given zone spec.
pub fn decode_predictions(
    checkpoint: &Checkpoint,
    examples: &[SquadExample],
    features: &[Feature],
    spec: &ZoneSpec,
    cfg: &DecodeConfig,
) -> Result<PredictionSet, HarnessError> {
    let contexts: BTreeMap<&str, &str> = examples
        .iter()
        .map(|ex| (ex.qas_id.as_str(), ex.context.as_str()))
        .collect();

    let mut window_best: BTreeMap<String, Vec<crate::model::SpanPrediction>> = BTreeMap::new();
    for feature in features {
        let context = contexts
            .get(feature.qas_id.as_str())
            .ok_or_else(|| HarnessError::OrphanFeature {
                qas_id: feature.qas_id.clone(),
            })?;
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &checkpoint.params);
        let hidden = encode(&mut g, &vars, &checkpoint.config, feature, spec)?;
        let (sv, ev) = span_logits(&mut g, &vars, hidden, &feature.layout)?;
        let preds = predict_span(
            g.value(sv).data(),
            g.value(ev).data(),
            feature,
            context,
            cfg.max_answer_length,
            cfg.n_best,
        )?;
        window_best
            .entry(feature.qas_id.clone())
            .or_default()
            .extend(preds.into_iter().take(1));
    }

    let mut out = PredictionSet::new();
    for (qas_id, candidates) in window_best {
        let best = best_prediction(candidates).expect("every window decodes one span");
        out.insert(qas_id, best.text);
    }
    Ok(out)
}

/// The cells of one sweep, in execution order.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub cells: Vec<ZoneSpec>,
    pub metric: Metric,
}

impl SweepPlan {
    /// The default plan: every layer crossed with the five ablation zones.
    pub fn full(num_layers: usize, metric: Metric) -> Self {
        let mut cells = Vec::with_capacity(num_layers * Zone::ABLATION_SET.len());
        for layer in 0..num_layers {
            for zone in Zone::ABLATION_SET {
                cells.push(ZoneSpec {
                    layers: LayerSelector::Layer(layer),
                    zone,
                });
            }
        }
        Self { cells, metric }
    }
}

/// Prediction file name for one cell: 0-based layer index (or `all` for an
/// every-layer cell) and the lowercase zone label.
pub fn prediction_filename(spec: &ZoneSpec) -> String {
    let layer = match spec.layers {
        LayerSelector::Layer(i) => i.to_string(),
        LayerSelector::EveryLayer => "all".to_string(),
    };
    format!("predictions_layer{layer}_{}.json", spec.zone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
    Reused,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub layer: String,
    pub zone: String,
    pub file: String,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub metric: Metric,
    pub cells: Vec<CellRecord>,
}

impl SweepManifest {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.status != CellStatus::Failed)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn run_cell(
    checkpoint: &Checkpoint,
    examples: &[SquadExample],
    features: &[Feature],
    decode_cfg: &DecodeConfig,
    out_dir: &Path,
    spec: &ZoneSpec,
    resume: bool,
) -> CellRecord {
    let file = prediction_filename(spec);
    let layer = match spec.layers {
        LayerSelector::Layer(i) => i.to_string(),
        LayerSelector::EveryLayer => "all".to_string(),
    };
    let zone = spec.zone.to_string();
    let path = out_dir.join(&file);
    let started = Instant::now();

    if resume && path.exists() {
        return CellRecord {
            layer,
            zone,
            file,
            status: CellStatus::Reused,
            error: None,
            elapsed_ms: 0,
        };
    }

    let result = decode_predictions(checkpoint, examples, features, spec, decode_cfg)
        .map_err(|e| e.to_string())
        .and_then(|preds| {
            serde_json::to_vec(&preds)
                .map_err(|e| e.to_string())
                .and_then(|bytes| write_atomic(&path, &bytes).map_err(|e| e.to_string()))
        });
    match result {
        Ok(()) => CellRecord {
            layer,
            zone,
            file,
            status: CellStatus::Ok,
            error: None,
            elapsed_ms: started.elapsed().as_millis() as u64,
        },
        Err(message) => CellRecord {
            layer,
            zone,
            file,
            status: CellStatus::Failed,
            error: Some(message),
            elapsed_ms: started.elapsed().as_millis() as u64,
        },
    }
}

/// Decode the dev set once per plan cell, writing one prediction file each
/// plus a `manifest.json`. Cells are independent; a failed cell is recorded
/// and the rest proceed. With `workers > 1` cells run concurrently and the
/// outputs are byte-identical to a serial run.
pub fn run_ablation(
    checkpoint: &Checkpoint,
    examples: &[SquadExample],
    features: &[Feature],
    plan: &SweepPlan,
    out_dir: &Path,
    workers: usize,
    resume: bool,
) -> Result<SweepManifest, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let probe = out_dir.join(".write-probe");
    fs::write(&probe, b"ok").map_err(|e| HarnessError::Unwritable {
        dir: out_dir.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::remove_file(&probe)?;

    let cell_fn = |spec: &ZoneSpec| {
        run_cell(checkpoint, examples, features, &DecodeConfig::default(), out_dir, spec, resume)
    };
    let cells: Vec<CellRecord> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| plan.cells.par_iter().map(cell_fn).collect())
    } else {
        plan.cells.iter().map(cell_fn).collect()
    };

    let manifest = SweepManifest {
        metric: plan.metric,
        cells,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn detect_num_layers(dir: &Path) -> usize {
    let mut layers = 0;
    while dir
        .join(format!("predictions_layer{layers}_all.json"))
        .exists()
    {
        layers += 1;
    }
    layers
}

/// Evaluate every per-layer prediction file in `dir` into a results table.
///
/// Layer count is autodetected from the `predictions_layer{i}_all.json`
/// series unless given; all `L x 5` files must be present.
pub fn collect_results(
    dir: &Path,
    dataset: &[SquadExample],
    use_f1: bool,
    num_layers: Option<usize>,
) -> Result<ResultsTable, HarnessError> {
    let layers = match num_layers {
        Some(l) => l,
        None => detect_num_layers(dir),
    };
    if layers == 0 {
        return Err(HarnessError::EmptyDir {
            dir: dir.display().to_string(),
        });
    }
    let metric = if use_f1 { Metric::F1 } else { Metric::Em };
    let mut rows = Vec::with_capacity(layers);
    for layer in 0..layers {
        let mut row = [0.0; 5];
        for (j, zone) in Zone::ABLATION_SET.iter().enumerate() {
            let spec = ZoneSpec {
                layers: LayerSelector::Layer(layer),
                zone: *zone,
            };
            let file = prediction_filename(&spec);
            let path = dir.join(&file);
            if !path.exists() {
                return Err(HarnessError::MissingCell {
                    layer: layer.to_string(),
                    zone: zone.to_string(),
                    file,
                });
            }
            let preds = load_predictions(&fs::read_to_string(&path)?)?;
            let report = evaluate(dataset, &preds)?;
            row[j] = round3(if use_f1 { report.f1 } else { report.exact });
        }
        rows.push(row);
    }
    ResultsTable::new(metric, rows)
}

/// Path of the baseline (unmasked) prediction file.
pub fn baseline_prediction_path(out_dir: &Path) -> PathBuf {
    out_dir.join("predictions.json")
}
