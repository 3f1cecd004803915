//! The reference biased dataset and the experiment settings tuned for it.
//!
//! Two groups of 300 subjects with 3 samples each in 64 dimensions. Group
//! `b` packs its identities four times tighter than group `a`, so its
//! impostor scores sit much closer to its genuine scores. Identity offsets
//! occupy a rank-8 subspace per group and sample noise is isotropic, which
//! leaves a linear head room to trade noise for identity signal.

use crate::dataset::DemographicSchema;
use crate::eval::PairingPolicy;
use crate::experiment::{DataSource, ExperimentConfig};
use crate::head::{AdamConfig, TrainConfig};
use crate::synthgen::SynthConfig;
use crate::triplets::TripletMode;

pub const SPREAD_A: f64 = 1.0;
pub const SPREAD_B: f64 = 0.25;
pub const NOISE: f64 = 0.35;
pub const OFFSET_RANK: usize = 8;

/// The biased two-group synth config.
pub fn biased_synth(seed: u64) -> SynthConfig {
    biased_synth_with(SPREAD_A, SPREAD_B, NOISE, seed)
}

/// The two-group layout with custom spreads and noise.
pub fn biased_synth_with(spread_a: f64, spread_b: f64, noise: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        dim: 64,
        schema: DemographicSchema::single("group", &["a", "b"]).expect("valid schema"),
        subjects_per_group: 300,
        samples_per_subject: 3,
        inter_center_spread: [("a".to_string(), spread_a), ("b".to_string(), spread_b)]
            .into_iter()
            .collect(),
        intra_subject_noise: noise,
        offset_rank: Some(OFFSET_RANK),
        seed,
    }
}

/// Training settings for the fixture: 10 epochs of 20-identity batches.
pub fn biased_train(mode: TripletMode) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        identities_per_batch: 20,
        per_identity: 3,
        mode,
        margin: 1.0,
        dropout_rate: 0.05,
        adam: AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        },
        max_negatives_per_pair: None,
        seed: 0,
    }
}

/// Five-fold experiment over the fixture with exhaustive pair scoring.
pub fn biased_experiment(mode: TripletMode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        data: DataSource::Synth(biased_synth(0)),
        folds: 5,
        train: biased_train(mode),
        pairing: PairingPolicy::Exhaustive,
    }
}
