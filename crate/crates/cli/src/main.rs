//! `nohgnn` command line: ingest edge lists, train, evaluate checkpoints
//! and run the gradient self-check.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use nohgnn::config::RunConfig;
use nohgnn::graph::{load_edge_list, BinOptions, Role, SplitFractions};
use nohgnn::pipeline::{gradcheck_tiny, prepare_dataset, Dataset, PrepareOptions, TrainedModel};
use nohgnn::tensor::TransformKind;
use nohgnn::train::train_loop;

const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Set to `sigmoid` to corrupt the sigmoid backward rule in `gradcheck`.
const FAULT_ENV: &str = "NOHGNN_FAULT_INJECT";

#[derive(Parser)]
#[command(
    name = "nohgnn",
    version,
    about = "Neighborhood-overlap-aware high-order GNN for dynamic link prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin an edge list into snapshots, split it and cache the result.
    Ingest(RunArgs),
    /// Train on a cached dataset (or an edge list) and save the best checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint on one split of its dataset; prints JSON.
    Eval(EvalArgs),
    /// Check analytic against numeric gradients on a tiny instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (`key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list: `src dst timestamp [weight]` per line.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Cached dataset written by `ingest`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of time slots T.
    #[arg(long)]
    slots: Option<usize>,
    /// Hop count K of the overlap tensor (1, 2 or 3).
    #[arg(long = "k-hops")]
    k_hops: Option<usize>,
    /// Number of layers L.
    #[arg(long)]
    layers: Option<usize>,
    /// Embedding dimension F.
    #[arg(long)]
    dim: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// L2 regularization coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// Transform along the time axis.
    #[arg(long, value_parser = ["identity", "dct"])]
    transform: Option<String>,
    /// Seed for splitting, initialization and sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Negatives drawn per positive.
    #[arg(long = "neg-ratio")]
    neg_ratio: Option<usize>,
    /// Maximum number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation-F1 improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cached dataset the checkpoint was trained on.
    #[arg(long)]
    dataset: PathBuf,
    /// Split to evaluate.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    split: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Transform along the time axis.
    #[arg(long, default_value = "identity", value_parser = ["identity", "dct"])]
    transform: String,
    /// Seed of the random instance.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut set = |key: &str, v: Option<String>| v.map(|v| cfg.set(key, &v)).transpose();
        set(
            "edges",
            self.edges.as_ref().map(|p| p.display().to_string()),
        )?;
        set(
            "dataset",
            self.dataset.as_ref().map(|p| p.display().to_string()),
        )?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        set("slots", self.slots.map(|v| v.to_string()))?;
        set("k_hops", self.k_hops.map(|v| v.to_string()))?;
        set("layers", self.layers.map(|v| v.to_string()))?;
        set("dim", self.dim.map(|v| v.to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("beta", self.beta.map(|v| v.to_string()))?;
        set("transform", self.transform.clone())?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("neg_ratio", self.neg_ratio.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("patience", self.patience.map(|v| v.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn prepare_options(cfg: &RunConfig) -> PrepareOptions {
    PrepareOptions {
        bin: BinOptions {
            slots: cfg.slots,
            undirected: cfg.undirected,
            binarize: cfg.binarize,
        },
        fractions: SplitFractions::default(),
        seed: cfg.train.seed,
        neg_ratio: cfg.train.neg_ratio,
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn cmd_ingest(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let Some(edges) = &cfg.edges else {
        bail!("ingest needs --edges");
    };
    let list = load_edge_list(edges)?;
    let data = prepare_dataset(&dataset_name(edges), &list, prepare_options(&cfg))?;
    create_out(&cfg.out)?;
    let path = cfg.out.join("dataset.nohg");
    data.save(&path)?;
    info!("wrote {}", path.display());
    println!(
        "nodes={} edges={} slots={}",
        data.num_nodes(),
        list.events.len(),
        data.num_slots()
    );
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let (data, fresh) = match (&cfg.dataset, &cfg.edges) {
        (Some(p), _) => (Dataset::load(p)?, false),
        (None, Some(e)) => {
            let list = load_edge_list(e)?;
            (
                prepare_dataset(&dataset_name(e), &list, prepare_options(&cfg))?,
                true,
            )
        }
        (None, None) => bail!("train needs --dataset or --edges"),
    };
    create_out(&cfg.out)?;
    if fresh {
        data.save(cfg.out.join("dataset.nohg"))?;
    }
    let outcome = train_loop(&data, &cfg.train)?;
    let log_path = cfg.out.join("metrics.jsonl");
    let file =
        File::create(&log_path).with_context(|| format!("cannot write {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    for entry in &outcome.history {
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    log.flush()?;
    let model = TrainedModel::new(cfg.train.clone(), outcome.params, &data, outcome.best_epoch);
    model.save(cfg.out.join("model.nohg"))?;
    println!(
        "best_epoch={} stopped_at={} val_f1={:.4} val_accuracy={:.4} test_f1={:.4} test_accuracy={:.4}",
        outcome.best_epoch,
        outcome.stopped_at,
        outcome.val.f1,
        outcome.val.accuracy,
        outcome.test.f1,
        outcome.test.accuracy
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let data = Dataset::load(&args.dataset)?;
    let role: Role = args.split.parse()?;
    let metrics = model.evaluate(&data, role)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let kind: TransformKind = args.transform.parse()?;
    let fault = std::env::var(FAULT_ENV)
        .map(|v| v == "sigmoid")
        .unwrap_or(false);
    let report = gradcheck_tiny(kind, args.seed, fault)?;
    let worst = report
        .worst
        .as_ref()
        .map(|(n, k)| format!("{n}[{k}]"))
        .unwrap_or_default();
    println!(
        "max_rel_error={:.6e} worst={worst} entries={}",
        report.max_rel_error, report.entries
    );
    Ok(report.max_rel_error <= GRADCHECK_TOLERANCE)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
