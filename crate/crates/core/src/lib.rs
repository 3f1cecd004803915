//! Discrimination-aware adaptation of precomputed face embeddings.
//!
//! A square linear head with input dropout and L2 normalization is trained on
//! frozen embeddings with a triplet objective whose triplets are mined online
//! from demographically balanced batches. Evaluation reports verification EER
//! per demographic group together with the across-group average and standard
//! deviation, which is the fairness measure the training aims to reduce.
//!
//! Modules:
//! - [`dataset`]: embedding records, on-disk formats, identity-disjoint folds.
//! - [`synthgen`]: synthetic datasets with group-dependent impostor spread.
//! - [`triplets`]: balanced batch sampling, triplet enumeration, semi-hard selection.
//! - [`head`]: the projection head, loss, analytic gradient, Adam and training.
//! - [`eval`]: pair scoring, EER, fairness reports and histograms.
//! - [`experiment`]: end-to-end k-fold runs writing report artifacts.
//! - [`fixture`]: the reference biased dataset and its tuned experiment.

pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod fixture;
pub mod head;
pub mod rng;
pub mod synthgen;
pub mod triplets;

pub use dataset::{
    kfold_split, load_dataset, save_dataset, DataFormat, Dataset, DatasetError, DemographicSchema,
    EmbeddingRecord, FoldPlan, Violation,
};
pub use eval::{
    compute_eer, fairness_report, goodness, pair_scores, EvalError, FairnessReport, PairingPolicy,
    ScoreSet,
};
pub use experiment::{ExperimentConfig, ExperimentError};
pub use head::{
    init_head, train, triplet_loss, AdamConfig, AdamState, DebiasHead, HeadError, TrainConfig,
    TrainLog,
};
pub use synthgen::{generate, SynthConfig, SynthError};
pub use triplets::{
    generate_triplets, select_semi_hard, Batch, BatchSampler, TripletError, TripletIndex,
    TripletMode,
};

/// Version string embedded in every written artifact.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
