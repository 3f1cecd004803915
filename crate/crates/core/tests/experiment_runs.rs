use std::fs;
use std::path::Path;

use sensitive_loss::experiment::{run, run_to_dir, AggregateFile, ConfigFile, DataSource, FoldPlanFile, ReportFile};
use sensitive_loss::fixture::{biased_experiment, biased_synth};
use sensitive_loss::{DebiasHead, ExperimentConfig, TripletMode, TOOL_VERSION};

fn small_config() -> ExperimentConfig {
    let mut cfg = biased_experiment(TripletMode::Unrestricted, 3);
    if let DataSource::Synth(s) = &mut cfg.data {
        s.dim = 24;
        s.subjects_per_group = 40;
    }
    cfg.folds = 4;
    cfg.train.epochs = 2;
    cfg.train.identities_per_batch = 10;
    cfg
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(read_all(&p));
        } else {
            out.push((p.strip_prefix(dir.parent().unwrap()).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to_dir(&cfg, &a.path().join("run")).unwrap();
    run_to_dir(&cfg, &b.path().join("run")).unwrap();
    let (fa, fb) = (read_all(&a.path().join("run")), read_all(&b.path().join("run")));
    assert_eq!(fa.len(), 5 + 3 * cfg.folds + 1);
    assert_eq!(fa, fb);
}

#[test]
fn every_artifact_carries_provenance() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let outcome = run_to_dir(&cfg, &out).unwrap();
    let hash = &outcome.config_hash;

    let config: ConfigFile = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!((&config.config_hash, config.seed, config.tool_version.as_str()), (hash, 3, TOOL_VERSION));
    assert_eq!(config.config, cfg);
    let plan: FoldPlanFile = serde_json::from_slice(&fs::read(out.join("folds.json")).unwrap()).unwrap();
    assert_eq!(&plan.config_hash, hash);
    assert_eq!(plan.plan, outcome.plan);
    let agg: AggregateFile = serde_json::from_slice(&fs::read(out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!((&agg.config_hash, agg.seed), (hash, 3));
    for name in ["aggregate.txt", "histograms.csv", "train_log.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains(hash) && first.contains("seed=3") && first.contains(TOOL_VERSION), "{name}: {first}");
    }
    for f in 0..cfg.folds {
        for model in ["baseline", "sensitive"] {
            let r = ReportFile::load(&out.join(format!("fold_{f}/{model}.json"))).unwrap();
            assert_eq!((&r.config_hash, r.seed, r.fold, r.model.as_str()), (hash, 3, Some(f), model));
        }
        let (head, meta) = DebiasHead::load(&out.join(format!("fold_{f}/head.slhead"))).unwrap();
        assert_eq!(&meta.config_hash, hash);
        assert_eq!(meta.tool_version, TOOL_VERSION);
        assert_eq!(head, outcome.folds[f].head, "evaluated head equals the stored one");
    }
    // A run's config.json is itself a valid config.
    let again = ExperimentConfig::from_json(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(again.hash(), *hash);
}

#[test]
fn aggregate_averages_fold_eers() {
    let outcome = run(&small_config()).unwrap();
    for (g, pooled) in outcome.baseline.per_group.iter().enumerate() {
        let mean = outcome.folds.iter().map(|f| f.baseline.per_group[g].eer).sum::<f64>() / outcome.folds.len() as f64;
        assert!((pooled.eer - mean).abs() < 1e-15);
    }
    let delta = outcome.sensitive.relative_delta_vs_baseline.as_ref().unwrap();
    let expected = 100.0 * (outcome.sensitive.std_eer - outcome.baseline.std_eer) / outcome.baseline.std_eer;
    assert!((delta.std_pct.unwrap() - expected).abs() < 1e-9);
}

#[test]
fn failures_leave_a_marker() {
    let mut cfg = small_config();
    cfg.folds = 1;
    let dir = tempfile::tempdir().unwrap();
    let err = run_to_dir(&cfg, dir.path()).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("k-fold requires k ≥ 2"));
    assert!(fs::read_to_string(dir.path().join("FAILED")).unwrap().contains("k ≥ 2"));

    cfg.folds = 4;
    run_to_dir(&cfg, dir.path()).unwrap();
    assert!(!dir.path().join("FAILED").exists());
}

#[test]
fn shipped_configs_match_the_fixture() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let text = |name: &str| fs::read_to_string(root.join(name)).unwrap();
    let synth: sensitive_loss::SynthConfig = serde_json::from_str(&text("synth_biased.json")).unwrap();
    assert_eq!(synth, biased_synth(7));
    let unrestricted = ExperimentConfig::from_json(&text("experiment_biased.json")).unwrap();
    assert_eq!(unrestricted, biased_experiment(TripletMode::Unrestricted, 2024));
    let restricted = ExperimentConfig::from_json(&text("experiment_biased_restricted.json")).unwrap();
    assert_eq!(restricted, biased_experiment(TripletMode::Restricted, 2024));
}

#[test]
fn config_errors_name_the_field() {
    let err = ExperimentConfig::from_json(r#"{"data": {"synth": {"dim": 4}}}"#).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("seed") || err.to_string().contains("schema"), "{err}");
}
