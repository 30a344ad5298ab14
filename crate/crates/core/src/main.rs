//! Command-line front end for the attention-zone laboratory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use attnzone::config::RunConfig;
use attnzone::demo::{run_demo, DemoConfig};
use attnzone::harness::{
    average_runs, baseline_prediction_path, collect_results, decode_predictions,
    prediction_filename, run_ablation, stddev_of_difference, Metric, ResultsTable, SweepPlan,
};
use attnzone::metrics::{evaluate, load_predictions};
use attnzone::model::{LayerSelector, Zone, ZoneSpec};
use attnzone::text::{build_vocab_with_case, featurize, load_squad, Feature, SquadExample, Vocab};
use attnzone::train::{load_checkpoint, loss_trace_csv, save_checkpoint, train, Checkpoint};
use attnzone::viz::{render_heatmap, HeatmapSpec};

#[derive(Parser)]
#[command(
    name = "attnzone",
    about = "Train a span-extraction reader, ablate attention zones layer by layer, score with SQuAD metrics, and render the heatmap",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train checkpoints on a SQuAD-format training file (one per seed)
    Train(TrainArgs),
    /// Decode a dev set: baseline, a single masked cell, or the full sweep
    Decode(DecodeArgs),
    /// Score a prediction file against a dataset; prints the metrics JSON
    Eval(EvalArgs),
    /// Evaluate a directory of sweep prediction files into results.csv
    Collect(CollectArgs),
    /// Multi-run statistics over results tables
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Render the layer-by-zone delta heatmap from a results table
    Visualize(VisualizeArgs),
    /// End-to-end pipeline on a generated synthetic corpus
    Demo(DemoArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// SQuAD v1.1 training JSON
    #[arg(long)]
    train_file: PathBuf,
    /// Checkpoint output path (seed is appended when training several)
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// JSON run config; missing fields take desk-scale defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train one checkpoint per seed (overrides the config seed list)
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    epochs: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// SQuAD v1.1 dev JSON
    #[arg(long)]
    dev_file: PathBuf,
    #[arg(long, default_value = "prediction")]
    out_dir: PathBuf,
    /// 0-based layer to mask, or "none" to mask every layer
    #[arg(long)]
    mask_layer: Option<String>,
    /// Zone to mask: q2, q2p, p2q, p2, or all
    #[arg(long)]
    mask_zone: Option<Zone>,
    /// Run the full layers-by-zones sweep instead of a single cell
    #[arg(long)]
    sweep: bool,
    /// Reuse prediction files that already exist (sweep only)
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset JSON, then predictions JSON (official argument order)
    dataset: PathBuf,
    predictions: PathBuf,
}

#[derive(Args)]
struct CollectArgs {
    /// Directory holding predictions_layer{i}_{zone}.json files
    prediction_dir: PathBuf,
    /// Output CSV path
    results_csv: PathBuf,
    /// Dataset the predictions are scored against
    #[arg(long)]
    dataset: PathBuf,
    /// Collect F1 instead of exact match
    #[arg(long)]
    use_f1: bool,
    /// Layer count; autodetected from the files when omitted
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Elementwise mean of several results tables
    Average(AverageArgs),
    /// Per-zone sample standard deviation of layerwise differences (b - a)
    Stddev(StddevArgs),
}

#[derive(Args)]
struct AverageArgs {
    /// Output CSV
    out: PathBuf,
    /// Input results tables (two or more)
    #[arg(required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    use_f1: bool,
}

#[derive(Args)]
struct StddevArgs {
    table_a: PathBuf,
    table_b: PathBuf,
    #[arg(long)]
    use_f1: bool,
    /// Also write the row to a CSV file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeArgs {
    /// Results CSV, baseline score, output SVG (script argument order)
    results_csv: PathBuf,
    baseline: f64,
    out_svg: PathBuf,
    #[arg(long)]
    use_f1: bool,
    /// Skip the per-cell numeric annotations
    #[arg(long)]
    no_annotations: bool,
    /// Put layers on rows instead of columns
    #[arg(long)]
    transpose: bool,
    /// Fixed symmetric color-scale bound (default: data maximum, floor 1.0)
    #[arg(long)]
    scale_bound: Option<f64>,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "demo-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    epochs: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Collect(args) => cmd_collect(args),
        Command::Stats(cmd) => cmd_stats(cmd),
        Command::Visualize(args) => cmd_visualize(args),
        Command::Demo(args) => cmd_demo(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_dataset(path: &Path) -> Result<Vec<SquadExample>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(load_squad(&text)?)
}

fn featurize_dataset(
    examples: &[SquadExample],
    vocab: &Vocab,
    cfg: &attnzone::text::FeaturizeConfig,
) -> Result<Vec<Feature>> {
    let mut features = Vec::new();
    for ex in examples {
        let out = featurize(ex, vocab, cfg)?;
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        features.extend(out.features);
    }
    Ok(features)
}

fn seeded_path(base: &Path, seed: u64, multi: bool) -> PathBuf {
    if !multi {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    let ext = base.extension().map(|s| s.to_string_lossy()).unwrap_or_default();
    let name = if ext.is_empty() {
        format!("{stem}-seed{seed}")
    } else {
        format!("{stem}-seed{seed}.{ext}")
    };
    base.with_file_name(name)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;

    let examples = load_dataset(&args.train_file)?;
    let corpus: Vec<&str> = examples
        .iter()
        .flat_map(|ex| [ex.context.as_str(), ex.question.as_str()])
        .collect();
    let vocab = build_vocab_with_case(corpus, cfg.vocab_size, !cfg.cased)?;
    let features = featurize_dataset(&examples, &vocab, &cfg.featurize)?;
    let model_config = cfg
        .model
        .into_model_config(vocab.len(), cfg.featurize.max_seq_length);

    let multi = cfg.seeds.len() > 1;
    for &seed in &cfg.seeds {
        let mut train_config = cfg.train;
        train_config.seed = seed;
        let outcome = train(&features, &vocab, &model_config, &train_config)?;
        let ckpt_path = seeded_path(&args.out, seed, multi);
        save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
        let loss_path = ckpt_path.with_extension("loss.csv");
        fs::write(&loss_path, loss_trace_csv(&outcome.loss_trace))?;
        let last = outcome.loss_trace.last().map_or(f64::NAN, |(_, l)| *l);
        println!(
            "seed {seed}: {} steps, final loss {last:.4} -> {}",
            outcome.checkpoint.metadata.steps,
            ckpt_path.display()
        );
    }
    Ok(())
}

fn decode_featurize_config(
    cfg: &RunConfig,
    checkpoint: &Checkpoint,
) -> attnzone::text::FeaturizeConfig {
    let mut f = cfg.featurize;
    f.max_seq_length = f.max_seq_length.min(checkpoint.config.max_positions);
    f
}

fn parse_layer_selector(raw: &Option<String>, num_layers: usize) -> Result<LayerSelector> {
    match raw.as_deref() {
        None => Ok(LayerSelector::EveryLayer),
        Some(s) if s.eq_ignore_ascii_case("none") => Ok(LayerSelector::EveryLayer),
        Some(s) => {
            let idx: usize = s
                .parse()
                .with_context(|| format!("--mask-layer must be a 0-based index or \"none\", got '{s}'"))?;
            if idx >= num_layers {
                bail!("--mask-layer {idx} out of range for a {num_layers}-layer model");
            }
            Ok(LayerSelector::Layer(idx))
        }
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let examples = load_dataset(&args.dev_file)?;
    let fcfg = decode_featurize_config(&cfg, &checkpoint);
    let features = featurize_dataset(&examples, &checkpoint.vocab, &fcfg)?;
    fs::create_dir_all(&args.out_dir)?;

    if args.sweep {
        let metric = if cfg.use_f1 { Metric::F1 } else { Metric::Em };
        let plan = SweepPlan::full(checkpoint.config.num_layers, metric);
        let manifest = run_ablation(
            &checkpoint,
            &examples,
            &features,
            &plan,
            &args.out_dir,
            args.workers.max(cfg.workers),
            args.resume,
        )?;
        let ok = manifest.cells.iter().filter(|c| c.error.is_none()).count();
        println!(
            "sweep: {ok}/{} cells -> {}",
            manifest.cells.len(),
            args.out_dir.display()
        );
        if !manifest.all_ok() {
            bail!("{} sweep cell(s) failed; see manifest.json", manifest.cells.len() - ok);
        }
        return Ok(());
    }

    let (spec, path) = match args.mask_zone {
        None => (
            ZoneSpec::baseline(),
            baseline_prediction_path(&args.out_dir),
        ),
        Some(zone) => {
            let layers = parse_layer_selector(&args.mask_layer, checkpoint.config.num_layers)?;
            let spec = ZoneSpec { layers, zone };
            let path = args.out_dir.join(prediction_filename(&spec));
            (spec, path)
        }
    };
    let preds = decode_predictions(&checkpoint, &examples, &features, &spec, &cfg.decode)?;
    fs::write(&path, serde_json::to_vec(&preds)?)?;
    println!("{} predictions -> {}", preds.len(), path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let preds = load_predictions(&fs::read_to_string(&args.predictions)?)?;
    let report = evaluate(&dataset, &preds)?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_collect(args: CollectArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let table = collect_results(&args.prediction_dir, &dataset, args.use_f1, args.layers)?;
    table.write_csv(&args.results_csv)?;
    println!(
        "{} layers x 5 zones ({}) -> {}",
        table.num_layers(),
        table.metric,
        args.results_csv.display()
    );
    Ok(())
}

fn cmd_stats(cmd: StatsCommand) -> Result<()> {
    match cmd {
        StatsCommand::Average(args) => {
            let metric = if args.use_f1 { Metric::F1 } else { Metric::Em };
            let tables: Vec<ResultsTable> = args
                .inputs
                .iter()
                .map(|p| ResultsTable::read_csv(p, metric))
                .collect::<Result<_, _>>()?;
            let avg = average_runs(&tables)?;
            avg.write_csv(&args.out)?;
            println!("averaged {} tables -> {}", tables.len(), args.out.display());
        }
        StatsCommand::Stddev(args) => {
            let metric = if args.use_f1 { Metric::F1 } else { Metric::Em };
            let a = ResultsTable::read_csv(&args.table_a, metric)?;
            let b = ResultsTable::read_csv(&args.table_b, metric)?;
            let sd = stddev_of_difference(&a, &b)?;
            let row = format!(
                "all,q2,q2p,p2q,p2\n{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                sd[0], sd[1], sd[2], sd[3], sd[4]
            );
            print!("{row}");
            if let Some(out) = args.out {
                fs::write(&out, row)?;
            }
        }
    }
    Ok(())
}

fn cmd_visualize(args: VisualizeArgs) -> Result<()> {
    let metric = if args.use_f1 { Metric::F1 } else { Metric::Em };
    let table = ResultsTable::read_csv(&args.results_csv, metric)?;
    let mut spec = HeatmapSpec::new(table, args.baseline);
    spec.annotate = !args.no_annotations;
    spec.transpose = args.transpose;
    spec.scale_bound = args.scale_bound;
    let svg = render_heatmap(&spec)?;
    fs::write(&args.out_svg, svg)?;
    println!("heatmap -> {}", args.out_svg.display());
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<()> {
    let mut cfg = DemoConfig::new(args.out_dir, args.seed);
    cfg.workers = args.workers;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let report = run_demo(&cfg)?;
    println!(
        "trained {} steps on {} features (final loss {:.4})",
        report.steps, report.train_features, report.final_loss
    );
    println!(
        "baseline EM {:.3} / F1 {:.3} on {} dev questions",
        report.baseline.exact, report.baseline.f1, report.dev_questions
    );
    println!("checkpoint  {}", report.checkpoint_path.display());
    println!("predictions {}", report.prediction_dir.display());
    println!("results     {}", report.results_csv_path.display());
    println!("heatmap     {}", report.heatmap_path.display());
    Ok(())
}
