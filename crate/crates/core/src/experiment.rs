//! End-to-end k-fold experiments.
//!
//! For every fold the raw embeddings of the test subjects are scored
//! (baseline), a head is trained on the remaining folds and the test
//! subjects are scored again through it. Fold reports are pooled into an
//! aggregate by averaging group EERs over folds.
//!
//! All randomness derives from the experiment seed through named substreams:
//! `synth`, `split`, `train` (per fold) and `eval` (per fold). Seeds inside
//! embedded synth and train configs are overwritten accordingly.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{kfold_split, load_dataset, schema_path_for, DataFormat, Dataset, DatasetError, DemographicSchema, FoldPlan};
use crate::eval::{aggregate_reports, fairness_report, histograms_csv, pair_scores, EvalError, FairnessReport, Histogram, PairingPolicy};
use crate::head::{train, HeadError, HeadMetadata, TrainConfig, TrainLog};
use crate::rng;
use crate::synthgen::{generate, SynthConfig, SynthError};
use crate::TOOL_VERSION;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Whether the error stems from configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Synth(SynthError::Config(_))
            | ExperimentError::Dataset(DatasetError::FoldCount(_))
            | ExperimentError::Dataset(DatasetError::Schema(_))
            | ExperimentError::Head(HeadError::Config(_))
            | ExperimentError::Head(HeadError::DropoutRate(_))
            | ExperimentError::Head(HeadError::Margin(_)) => true,
            ExperimentError::Fold { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthConfig),
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<DataFormat>,
        /// Defaults to `<path>.schema.json`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<PathBuf>,
    },
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pairing: PairingPolicy,
}

impl ExperimentConfig {
    /// Parses a config, or the `config.json` written by an earlier run.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        match serde_json::from_str::<ConfigFile>(text) {
            Ok(file) => Ok(file.config),
            Err(_) => serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string())),
        }
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn load_dataset(&self) -> Result<Dataset, ExperimentError> {
        match &self.data {
            DataSource::Synth(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = rng::substream(self.seed, "synth");
                Ok(generate(&cfg)?)
            }
            DataSource::File { path, format, schema } => {
                let schema_path = schema.clone().unwrap_or_else(|| schema_path_for(path));
                let schema = DemographicSchema::load(&schema_path)?;
                let format = format.unwrap_or_else(|| DataFormat::from_path(path));
                Ok(load_dataset(path, format, &schema)?)
            }
        }
    }

    /// Training config of one fold, seeded from the experiment seed.
    pub fn fold_train_config(&self, fold: usize) -> TrainConfig {
        TrainConfig {
            seed: rng::substream_indexed(self.seed, "train", fold as u64),
            ..self.train.clone()
        }
    }

    pub fn fold_eval_seed(&self, fold: usize) -> u64 {
        rng::substream_indexed(self.seed, "eval", fold as u64)
    }

    pub fn split_seed(&self) -> u64 {
        rng::substream(self.seed, "split")
    }
}

/// Short hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// A report as written to disk, tagged with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub report: FairnessReport,
}

impl ReportFile {
    pub fn new(config_hash: &str, seed: u64, model: &str, fold: Option<usize>, report: FairnessReport) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            model: model.to_string(),
            fold,
            report,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// `config.json` of a run: the effective config with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// A fold plan as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlanFile {
    pub tool_version: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub plan: FoldPlan,
}

impl FoldPlanFile {
    pub fn new(config_hash: &str, plan: FoldPlan) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            plan,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }
}

/// One-line provenance header for text and CSV outputs.
pub fn provenance_line(config_hash: &str, seed: u64) -> String {
    format!("# tool={TOOL_VERSION} config_hash={config_hash} seed={seed}\n")
}

/// Histograms of several models in one CSV; the group column is
/// `<model>:<group label>`.
pub fn labeled_histograms_csv(config_hash: &str, seed: u64, sets: &[(&str, &[Histogram])]) -> String {
    let mut out = provenance_line(config_hash, seed);
    out.push_str("group,kind,bin_low,bin_high,count\n");
    for (model, hs) in sets {
        let relabeled: Vec<Histogram> = hs
            .iter()
            .map(|h| Histogram {
                group: format!("{model}:{}", h.group),
                ..h.clone()
            })
            .collect();
        out.push_str(&histograms_csv(&relabeled, false));
    }
    out
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub baseline: FairnessReport,
    pub sensitive: FairnessReport,
    pub train_log: TrainLog,
    pub head: crate::head::DebiasHead,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config_hash: String,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub baseline: FairnessReport,
    pub sensitive: FairnessReport,
    pub schema: DemographicSchema,
}

fn run_fold(
    config: &ExperimentConfig,
    dataset: &Dataset,
    plan: &FoldPlan,
    fold: usize,
) -> Result<FoldOutcome, ExperimentError> {
    let (train_split, test_split) = plan.split(dataset, fold)?;
    let labels = |g| dataset.schema.group_label(g);
    let eval_seed = config.fold_eval_seed(fold);

    let baseline_scores = pair_scores(&test_split, None, config.pairing, eval_seed)?;
    let baseline = fairness_report(&baseline_scores, labels, None)?;

    let (head, train_log) = train(&train_split, &config.fold_train_config(fold))?;
    // Evaluate the weights exactly as they are stored in the head file.
    let head = head.rounded_to_f32();
    let scores = pair_scores(&test_split, Some(&head), config.pairing, eval_seed)?;
    let sensitive = fairness_report(&scores, labels, Some(&baseline))?;
    Ok(FoldOutcome {
        fold,
        baseline,
        sensitive,
        train_log,
        head,
    })
}

/// Runs every fold (in parallel) without touching the filesystem.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.train.validate()?;
    let dataset = config.load_dataset()?;
    let plan = kfold_split(&dataset, config.folds, config.split_seed())?;
    let folds = (0..config.folds)
        .into_par_iter()
        .map(|f| {
            run_fold(config, &dataset, &plan, f).map_err(|e| ExperimentError::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let baselines: Vec<_> = folds.iter().map(|f| f.baseline.clone()).collect();
    let sensitives: Vec<_> = folds.iter().map(|f| f.sensitive.clone()).collect();
    let baseline = aggregate_reports(&baselines, None)?;
    let sensitive = aggregate_reports(&sensitives, Some(&baseline))?;
    Ok(ExperimentOutcome {
        config_hash: config.hash(),
        plan,
        folds,
        baseline,
        sensitive,
        schema: dataset.schema,
    })
}

/// Runs the experiment and writes all artifacts under `out`. On failure a
/// `FAILED` file describing the error is left in `out`.
pub fn run_to_dir(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome, ExperimentError> {
    create_dir(out)?;
    let failed = out.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed).map_err(|source| ExperimentError::Io {
            path: failed.clone(),
            source,
        })?;
    }
    let result = run(config).and_then(|outcome| write_outputs(config, &outcome, out).map(|_| outcome));
    if let Err(e) = &result {
        let _ = fs::write(&failed, format!("{}{e}\n", provenance_line(&config.hash(), config.seed)));
    }
    result
}

fn write_outputs(config: &ExperimentConfig, outcome: &ExperimentOutcome, out: &Path) -> Result<(), ExperimentError> {
    let hash = &outcome.config_hash;
    let seed = config.seed;
    let config_file = ConfigFile {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash.clone(),
        seed,
        config: config.clone(),
    };
    write_file(
        &out.join("config.json"),
        serde_json::to_string_pretty(&config_file).expect("config serializes") + "\n",
    )?;
    write_file(&out.join("folds.json"), FoldPlanFile::new(hash, outcome.plan.clone()).to_json())?;
    let mut train_log = provenance_line(hash, seed);
    train_log.push_str(&TrainLog::csv_header(&outcome.schema));
    train_log.push('\n');
    for f in &outcome.folds {
        let dir = out.join(format!("fold_{}", f.fold));
        create_dir(&dir)?;
        let base = ReportFile::new(hash, seed, "baseline", Some(f.fold), f.baseline.clone());
        write_file(&dir.join("baseline.json"), base.to_json())?;
        let sens = ReportFile::new(hash, seed, "sensitive", Some(f.fold), f.sensitive.clone());
        write_file(&dir.join("sensitive.json"), sens.to_json())?;
        let train_cfg = config.fold_train_config(f.fold);
        let meta = HeadMetadata {
            dim: f.head.dim,
            dropout_rate: f.head.dropout_rate,
            margin: f.head.margin,
            config_hash: hash.clone(),
            seed: train_cfg.seed,
            tool_version: TOOL_VERSION.to_string(),
        };
        f.head.save(&dir.join("head.slhead"), &meta)?;
        train_log.push_str(&f.train_log.csv_rows(&outcome.schema, f.fold));
    }
    write_file(&out.join("train_log.csv"), train_log)?;

    let aggregate = AggregateFile {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash.clone(),
        seed,
        folds: config.folds,
        mode: config.train.mode.to_string(),
        baseline: outcome.baseline.clone(),
        sensitive: outcome.sensitive.clone(),
    };
    write_file(
        &out.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate).expect("aggregate serializes") + "\n",
    )?;
    let mut text = provenance_line(hash, seed);
    text.push_str(&FairnessReport::render_table(&[
        ("baseline", &outcome.baseline),
        (&format!("sensitive-{}", config.train.mode), &outcome.sensitive),
    ]));
    write_file(&out.join("aggregate.txt"), text)?;
    write_file(
        &out.join("histograms.csv"),
        labeled_histograms_csv(
            hash,
            seed,
            &[
                ("baseline", &outcome.baseline.histograms),
                ("sensitive", &outcome.sensitive.histograms),
            ],
        ),
    )?;
    Ok(())
}

/// Contents of `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFile {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub folds: usize,
    pub mode: String,
    pub baseline: FairnessReport,
    pub sensitive: FairnessReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_changes_with_config() {
        let json = r#"{"seed": 1, "data": {"file": {"path": "x.csv"}}}"#;
        let a = ExperimentConfig::from_json(json).unwrap();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.folds, 5);
        assert_eq!(a.pairing, PairingPolicy::Protocol);
    }

    #[test]
    fn unknown_field_is_a_config_error() {
        let err = ExperimentConfig::from_json(r#"{"seed": 1, "data": {"file": {"path": "x"}}, "foo": 1}"#).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("foo"));
    }
}
