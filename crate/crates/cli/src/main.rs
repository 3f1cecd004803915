//! `sensloss`: command-line front end for sensitive-loss experiments.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or
//! usage errors.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sensitive_loss::dataset::{save_dataset, schema_path_for, DataFormat, Dataset, DemographicSchema};
use sensitive_loss::eval::{fairness_report, pair_scores, FairnessReport, PairingPolicy};
use sensitive_loss::experiment::{
    config_hash, labeled_histograms_csv, provenance_line, run_to_dir, AggregateFile, FoldPlanFile, ReportFile,
};
use sensitive_loss::head::{DebiasHead, HeadError, HeadMetadata, TrainConfig, TrainLog};
use sensitive_loss::synthgen::{generate, SynthConfig, SynthError};
use sensitive_loss::{kfold_split, load_dataset, train, ExperimentConfig, TripletMode, TOOL_VERSION};

#[derive(Parser)]
#[command(name = "sensloss", version, about = "Triplet-loss de-biasing of face embeddings and per-group EER evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic biased dataset from a JSON config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output file; `.csv` writes CSV, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assign subjects to identity-disjoint stratified folds.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a head on a dataset or on the training part of one fold.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fold: FoldArgs,
        /// JSON training config; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        seed: Option<u64>,
        /// Output head file.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-batch training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a dataset (or one fold's test part) with or without a head.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fold: FoldArgs,
        #[arg(long)]
        head: Option<PathBuf>,
        /// exhaustive | capped:<m> | protocol
        #[arg(long, default_value = "protocol")]
        pairing: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Earlier report.json to compute relative deltas against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Output directory for report.json, report.txt and histograms.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full k-fold protocol from an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        pairing: Option<String>,
    },
    /// Render report files or a run directory as a table.
    Report {
        /// Run directories, aggregate.json or report JSON files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file (CSV or binary, chosen by extension).
    #[arg(long)]
    data: PathBuf,
    /// Schema file; defaults to `<data>.schema.json`.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct FoldArgs {
    /// Fold plan written by `split`.
    #[arg(long, requires = "fold")]
    folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    mode: Option<TripletMode>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(m) = self.margin {
            cfg.margin = m;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn head_failure(e: HeadError) -> Failure {
    match e {
        HeadError::Config(_) | HeadError::DropoutRate(_) | HeadError::Margin(_) => usage(e),
        _ => runtime(e),
    }
}

type CmdResult = Result<(), Failure>;

fn read_config(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    let schema_path = args.schema.clone().unwrap_or_else(|| schema_path_for(&args.data));
    let schema = DemographicSchema::load(&schema_path).map_err(runtime)?;
    load_dataset(&args.data, DataFormat::from_path(&args.data), &schema).map_err(runtime)
}

/// The whole dataset, or the train or test part of one fold.
fn select_fold(dataset: Dataset, fold: &FoldArgs, want_train: bool) -> Result<Dataset, Failure> {
    let (Some(path), Some(f)) = (&fold.folds, fold.fold) else {
        return Ok(dataset);
    };
    let text = read_config(path)?;
    let file: FoldPlanFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let (train, test) = file.plan.split(&dataset, f).map_err(usage)?;
    Ok(if want_train { train } else { test })
}

fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let text = read_config(config)?;
    let mut cfg: SynthConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dataset = generate(&cfg).map_err(|e| match e {
        SynthError::Config(_) => usage(e),
        _ => runtime(e),
    })?;
    save_dataset(&dataset, out, DataFormat::from_path(out)).map_err(runtime)?;
    dataset.schema.save(&schema_path_for(out)).map_err(runtime)?;
    println!(
        "wrote {} records (dim {}, {} groups) to {}",
        dataset.records.len(),
        dataset.dim,
        dataset.schema.group_count(),
        out.display()
    );
    Ok(())
}

fn cmd_split(data: &DataArgs, k: usize, seed: u64, out: &Path) -> CmdResult {
    let dataset = load_data(data)?;
    let plan = kfold_split(&dataset, k, seed).map_err(|e| match e {
        sensitive_loss::DatasetError::FoldCount(_) => usage(e),
        _ => runtime(e),
    })?;
    #[derive(Serialize)]
    struct SplitKey<'a> {
        data: &'a Path,
        k: usize,
        seed: u64,
    }
    let hash = config_hash(&SplitKey { data: &data.data, k, seed });
    write(out, FoldPlanFile::new(&hash, plan.clone()).to_json())?;
    println!("wrote {k}-fold plan for {} subjects to {}", plan.assignment.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &DataArgs,
    fold: &FoldArgs,
    config: Option<&Path>,
    overrides: &TrainOverrides,
    seed: Option<u64>,
    out: &Path,
    log: Option<&Path>,
) -> CmdResult {
    let mut cfg = match config {
        Some(path) => {
            let text = read_config(path)?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    overrides.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(head_failure)?;
    let dataset = select_fold(load_data(data)?, fold, true)?;
    let (head, train_log) = train(&dataset, &cfg).map_err(head_failure)?;
    let hash = config_hash(&cfg);
    let meta = HeadMetadata {
        dim: head.dim,
        dropout_rate: head.dropout_rate,
        margin: head.margin,
        config_hash: hash.clone(),
        seed: cfg.seed,
        tool_version: TOOL_VERSION.to_string(),
    };
    head.save(out, &meta).map_err(runtime)?;
    if let Some(path) = log {
        let mut text = provenance_line(&hash, cfg.seed);
        text.push_str(&TrainLog::csv_header(&dataset.schema));
        text.push('\n');
        text.push_str(&train_log.csv_rows(&dataset.schema, fold.fold.unwrap_or(0)));
        write(path, text)?;
    }
    println!(
        "trained {}x{} head for {} updates; wrote {}",
        head.dim,
        head.dim,
        train_log.updates(),
        out.display()
    );
    Ok(())
}

/// Inputs that determine an evaluation's output.
#[derive(Serialize)]
struct EvalKey<'a> {
    data: &'a Path,
    fold: Option<usize>,
    head: Option<String>,
    pairing: PairingPolicy,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    data: &DataArgs,
    fold: &FoldArgs,
    head: Option<&Path>,
    pairing: &str,
    seed: u64,
    baseline: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let pairing: PairingPolicy = pairing.parse().map_err(usage)?;
    let baseline = baseline
        .map(|p| ReportFile::load(p).map_err(runtime))
        .transpose()?;
    let head = head
        .map(|p| DebiasHead::load(p).map_err(runtime))
        .transpose()?;
    let dataset = select_fold(load_data(data)?, fold, false)?;
    let scores = pair_scores(&dataset, head.as_ref().map(|(h, _)| h), pairing, seed).map_err(runtime)?;
    let labels = |g| dataset.schema.group_label(g);
    let report = fairness_report(&scores, labels, baseline.as_ref().map(|b| &b.report)).map_err(runtime)?;

    let key = EvalKey {
        data: &data.data,
        fold: fold.fold,
        head: head.as_ref().map(|(_, m)| m.config_hash.clone()),
        pairing,
        seed,
    };
    let hash = config_hash(&key);
    let model = if head.is_some() { "sensitive" } else { "baseline" };
    create_dir(out)?;
    let file = ReportFile::new(&hash, seed, model, fold.fold, report);
    write(&out.join("report.json"), file.to_json())?;
    let mut rows: Vec<(&str, &FairnessReport)> = Vec::new();
    if let Some(b) = &baseline {
        rows.push(("baseline", &b.report));
    }
    rows.push((model, &file.report));
    let table = FairnessReport::render_table(&rows);
    write(&out.join("report.txt"), provenance_line(&hash, seed) + &table)?;
    write(
        &out.join("histograms.csv"),
        labeled_histograms_csv(&hash, seed, &[(model, &file.report.histograms)]),
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_run(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    folds: Option<usize>,
    overrides: &TrainOverrides,
    pairing: Option<&str>,
) -> CmdResult {
    let text = read_config(config)?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = folds {
        cfg.folds = k;
    }
    overrides.apply(&mut cfg.train);
    if let Some(p) = pairing {
        cfg.pairing = p.parse().map_err(usage)?;
    }
    let outcome = run_to_dir(&cfg, out).map_err(|e| if e.is_config() { usage(e) } else { runtime(e) })?;
    print!(
        "{}",
        FairnessReport::render_table(&[
            ("baseline", &outcome.baseline),
            (&format!("sensitive-{}", cfg.train.mode), &outcome.sensitive),
        ])
    );
    println!("artifacts in {} (config hash {})", out.display(), outcome.config_hash);
    Ok(())
}

fn render_path(path: &Path) -> Result<String, Failure> {
    if path.is_dir() {
        let mut out = render_path(&path.join("aggregate.json"))?;
        let mut fold = 0;
        while path.join(format!("fold_{fold}")).is_dir() {
            let dir = path.join(format!("fold_{fold}"));
            let base = ReportFile::load(&dir.join("baseline.json")).map_err(runtime)?;
            let sens = ReportFile::load(&dir.join("sensitive.json")).map_err(runtime)?;
            out.push_str(&format!("\nfold {fold}\n"));
            out.push_str(&FairnessReport::render_table(&[
                ("baseline", &base.report),
                ("sensitive", &sens.report),
            ]));
            fold += 1;
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(agg) = serde_json::from_str::<AggregateFile>(&text) {
        let mut out = provenance_line(&agg.config_hash, agg.seed);
        out.push_str(&format!("aggregate over {} folds, {} triplets\n", agg.folds, agg.mode));
        out.push_str(&FairnessReport::render_table(&[
            ("baseline", &agg.baseline),
            (&format!("sensitive-{}", agg.mode), &agg.sensitive),
        ]));
        return Ok(out);
    }
    let file: ReportFile =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a report file: {e}", path.display())))?;
    Ok(provenance_line(&file.config_hash, file.seed) + &FairnessReport::render_table(&[(&file.model, &file.report)]))
}

fn cmd_report(paths: &[PathBuf]) -> CmdResult {
    for p in paths {
        print!("{}", render_path(p)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config, out, *seed),
        Command::Split { data, k, seed, out } => cmd_split(data, *k, *seed, out),
        Command::Train {
            data,
            fold,
            config,
            overrides,
            seed,
            out,
            log,
        } => cmd_train(data, fold, config.as_deref(), overrides, *seed, out, log.as_deref()),
        Command::Eval {
            data,
            fold,
            head,
            pairing,
            seed,
            baseline,
            out,
        } => cmd_eval(data, fold, head.as_deref(), pairing, *seed, baseline.as_deref(), out),
        Command::Run {
            config,
            out,
            seed,
            folds,
            overrides,
            pairing,
        } => cmd_run(config, out, *seed, *folds, overrides, pairing.as_deref()),
        Command::Report { paths } => cmd_report(paths),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
