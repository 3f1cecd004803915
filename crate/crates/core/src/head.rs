//! The de-biasing head and its training.
//!
//! The head maps a unit embedding `x` to `φ(x) = W·drop(x) / ‖W·drop(x)‖`
//! with a square weight matrix `W`. Training minimizes the mean hinged
//! triplet loss `max(0, ‖φA−φP‖² − ‖φA−φN‖² + Δ)` over the semi-hard
//! triplets of each balanced batch, with Adam.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{l2_norm, Dataset, DemographicSchema};
use crate::rng::{self, SeededRng};
use crate::triplets::{enumerate_slots, is_semi_hard, squared_distance, BatchSampler, SlotTriplet, TripletError, TripletMode};

/// Below this pre-normalization norm the projection is treated as collapsed.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Allowed deviation of an input's norm from 1.
pub const INPUT_NORM_TOLERANCE: f64 = 1e-6;

const HEAD_MAGIC: &[u8; 4] = b"SLHD";

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("margin must be positive and finite (got {0})")]
    Margin(f64),
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("input of length {found} does not match head dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("input norm {0} is not 1")]
    NotUnit(f64),
    #[error("degenerate projection: ‖W·x‖ = {0:e} (collapsed head)")]
    DegenerateProjection(f64),
    #[error("non-finite gradient at W[{row}][{col}] = {value} (step {step})")]
    NonFiniteGradient {
        row: usize,
        col: usize,
        value: f64,
        step: u64,
    },
    #[error("weights became non-finite after step {0}")]
    NonFiniteWeights(u64),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid head file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasHead {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub weights: Vec<f64>,
    pub dropout_rate: f64,
    pub margin: f64,
}

/// Forward pass intermediates of one sample.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Input after the dropout mask.
    pub input: Vec<f64>,
    pub norm: f64,
    pub phi: Vec<f64>,
}

pub enum ForwardMode<'r> {
    Inference,
    Train(&'r mut SeededRng),
}

fn check_hyper(dropout_rate: f64, margin: f64) -> Result<(), HeadError> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(HeadError::DropoutRate(dropout_rate));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(HeadError::Margin(margin));
    }
    Ok(())
}

/// Random head with entries uniform on `[−1/√dim, 1/√dim]`.
pub fn init_head(dim: usize, dropout_rate: f64, margin: f64, seed: u64) -> Result<DebiasHead, HeadError> {
    if dim == 0 {
        return Err(HeadError::ZeroDim);
    }
    check_hyper(dropout_rate, margin)?;
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = rng::seeded(seed);
    let weights = (0..dim * dim).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(DebiasHead {
        dim,
        weights,
        dropout_rate,
        margin,
    })
}

impl DebiasHead {
    pub fn identity(dim: usize, dropout_rate: f64, margin: f64) -> Result<Self, HeadError> {
        if dim == 0 {
            return Err(HeadError::ZeroDim);
        }
        check_hyper(dropout_rate, margin)?;
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Ok(Self {
            dim,
            weights,
            dropout_rate,
            margin,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Inverted-dropout mask: each entry is 0 with probability
    /// `dropout_rate`, otherwise `1 / (1 − dropout_rate)`.
    pub fn dropout_mask(&self, rng: &mut SeededRng) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout_rate);
        (0..self.dim)
            .map(|_| {
                if rng.random::<f64>() < self.dropout_rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), HeadError> {
        if x.len() != self.dim {
            return Err(HeadError::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let norm = l2_norm(x);
        if !((norm - 1.0).abs() <= INPUT_NORM_TOLERANCE) {
            return Err(HeadError::NotUnit(norm));
        }
        Ok(())
    }

    /// Projection with an explicit mask (`None` = no dropout). The input is
    /// not required to be unit norm here, which finite-difference checks use.
    pub fn project(&self, x: &[f64], mask: Option<&[f64]>) -> Result<Projection, HeadError> {
        if x.len() != self.dim {
            return Err(HeadError::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let input: Vec<f64> = match mask {
            Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => x.to_vec(),
        };
        let mut y: Vec<f64> = self
            .weights
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&input).map(|(w, v)| w * v).sum())
            .collect();
        let norm = l2_norm(&y);
        if !(norm >= DEGENERATE_NORM) {
            return Err(HeadError::DegenerateProjection(norm));
        }
        y.iter_mut().for_each(|v| *v /= norm);
        Ok(Projection { input, norm, phi: y })
    }

    pub fn forward(&self, x: &[f64], mode: ForwardMode<'_>) -> Result<Vec<f64>, HeadError> {
        self.check_input(x)?;
        let mask = match mode {
            ForwardMode::Train(rng) if self.dropout_rate > 0.0 => Some(self.dropout_mask(rng)),
            _ => None,
        };
        Ok(self.project(x, mask.as_deref())?.phi)
    }

    /// Inference-mode forward pass.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>, HeadError> {
        self.forward(x, ForwardMode::Inference)
    }

    /// Copy whose weights are rounded to `f32`, as stored in head files.
    pub fn rounded_to_f32(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| f64::from(w as f32)).collect(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path, metadata: &HeadMetadata) -> Result<(), HeadError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::to_vec(metadata).expect("metadata serializes");
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for &v in &self.weights {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, HeadMetadata), HeadError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HEAD_MAGIC {
            return Err(HeadError::Format("bad magic bytes".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let meta: HeadMetadata =
            serde_json::from_slice(&header).map_err(|e| HeadError::Format(e.to_string()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != meta.dim * meta.dim * 4 {
            return Err(HeadError::Format(format!(
                "expected {} weight bytes, found {}",
                meta.dim * meta.dim * 4,
                bytes.len()
            )));
        }
        let weights = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        check_hyper(meta.dropout_rate, meta.margin)?;
        let head = Self {
            dim: meta.dim,
            weights,
            dropout_rate: meta.dropout_rate,
            margin: meta.margin,
        };
        Ok((head, meta))
    }
}

/// Header of a `.slhead` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetadata {
    pub dim: usize,
    pub dropout_rate: f64,
    pub margin: f64,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)`.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    (squared_distance(a, p) - squared_distance(a, n) + margin).max(0.0)
}

/// Loss gradients with respect to the three normalized outputs, or `None`
/// when the hinge is inactive.
fn output_gradients(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Option<[Vec<f64>; 3]> {
    if triplet_loss(a, p, n, margin) <= 0.0 {
        return None;
    }
    let ga = n.iter().zip(p).map(|(n, p)| 2.0 * (n - p)).collect();
    let gp = a.iter().zip(p).map(|(a, p)| -2.0 * (a - p)).collect();
    let gn = a.iter().zip(n).map(|(a, n)| 2.0 * (a - n)).collect();
    Some([ga, gp, gn])
}

/// Adds `(I − φφᵀ)/‖y‖ · g ⊗ input` to `grad`.
fn backprop_into(grad: &mut [f64], proj: &Projection, g_phi: &[f64]) {
    let dim = proj.phi.len();
    let dot: f64 = proj.phi.iter().zip(g_phi).map(|(a, b)| a * b).sum();
    for i in 0..dim {
        let gy = (g_phi[i] - proj.phi[i] * dot) / proj.norm;
        if gy == 0.0 {
            continue;
        }
        let row = &mut grad[i * dim..(i + 1) * dim];
        row.iter_mut().zip(&proj.input).for_each(|(r, x)| *r += gy * x);
    }
}

/// Loss of one triplet and its exact gradient with respect to `W`.
///
/// `masks` are the dropout masks of anchor, positive and negative (`None` =
/// no dropout). The gradient is exactly zero when the hinge is inactive.
pub fn loss_gradient(
    head: &DebiasHead,
    xa: &[f64],
    xp: &[f64],
    xn: &[f64],
    masks: [Option<&[f64]>; 3],
) -> Result<(f64, Vec<f64>), HeadError> {
    let pa = head.project(xa, masks[0])?;
    let pp = head.project(xp, masks[1])?;
    let pn = head.project(xn, masks[2])?;
    let loss = triplet_loss(&pa.phi, &pp.phi, &pn.phi, head.margin);
    let mut grad = vec![0.0; head.dim * head.dim];
    if let Some([ga, gp, gn]) = output_gradients(&pa.phi, &pp.phi, &pn.phi, head.margin) {
        backprop_into(&mut grad, &pa, &ga);
        backprop_into(&mut grad, &pp, &gp);
        backprop_into(&mut grad, &pn, &gn);
    }
    Ok((loss, grad))
}

/// Mean loss over `triplets` (batch slots into `projections`) and its
/// gradient. Output-space gradients are accumulated per slot first, so each
/// slot is backpropagated once.
pub(crate) fn batch_objective(
    head: &DebiasHead,
    projections: &[Projection],
    triplets: &[SlotTriplet],
) -> (f64, Vec<f64>) {
    let dim = head.dim;
    let mut slot_grads: Vec<Option<Vec<f64>>> = vec![None; projections.len()];
    let mut total = 0.0;
    for t in triplets {
        let (a, p, n) = (&projections[t.anchor].phi, &projections[t.positive].phi, &projections[t.negative].phi);
        total += triplet_loss(a, p, n, head.margin);
        if let Some(gs) = output_gradients(a, p, n, head.margin) {
            for (slot, g) in [t.anchor, t.positive, t.negative].into_iter().zip(gs) {
                let acc = slot_grads[slot].get_or_insert_with(|| vec![0.0; dim]);
                acc.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
        }
    }
    let scale = 1.0 / triplets.len().max(1) as f64;
    let mut grad = vec![0.0; dim * dim];
    for (proj, g) in projections.iter().zip(&slot_grads) {
        if let Some(g) = g {
            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
            backprop_into(&mut grad, proj, &g);
        }
    }
    (total * scale, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cols: usize) -> Result<(), HeadError> {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        if let Some((i, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(HeadError::NonFiniteGradient {
                row: i / cols.max(1),
                col: i % cols.max(1),
                value,
                step: self.step_count + 1,
            });
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((w, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Applies one Adam update to the head's weights.
pub fn adam_step(head: &mut DebiasHead, state: &mut AdamState, grad: &[f64]) -> Result<(), HeadError> {
    state.step(&mut head.weights, grad, head.dim)?;
    if !head.is_finite() {
        return Err(HeadError::NonFiniteWeights(state.step_count));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub identities_per_batch: usize,
    pub per_identity: usize,
    pub mode: TripletMode,
    pub margin: f64,
    pub dropout_rate: f64,
    pub adam: AdamConfig,
    /// Keep at most this many negatives per (A, P) pair during enumeration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_negatives_per_pair: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            identities_per_batch: 300,
            per_identity: 3,
            mode: TripletMode::Unrestricted,
            margin: 0.2,
            dropout_rate: 0.5,
            adam: AdamConfig::default(),
            max_negatives_per_pair: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if self.epochs == 0 {
            return Err(HeadError::Config("epochs must be at least 1".into()));
        }
        if self.per_identity < 2 {
            return Err(HeadError::Config("per_identity must be at least 2".into()));
        }
        if self.max_negatives_per_pair == Some(0) {
            return Err(HeadError::Config("max_negatives_per_pair must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(HeadError::Config("invalid Adam hyperparameters".into()));
        }
        check_hyper(self.dropout_rate, self.margin)
    }
}

/// Per-batch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    /// Enumerated triplets before selection.
    pub candidates: usize,
    pub selected: usize,
    /// Selected triplets by the anchor's group index.
    pub selected_per_group: BTreeMap<usize, usize>,
    pub mean_loss: f64,
    /// False when the batch had no semi-hard triplets and was skipped.
    pub updated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub batches: Vec<BatchLog>,
}

impl TrainLog {
    pub fn updates(&self) -> usize {
        self.batches.iter().filter(|b| b.updated).count()
    }

    pub fn csv_header(schema: &DemographicSchema) -> String {
        let mut cols = vec!["fold", "epoch", "batch", "candidates", "selected"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((0..schema.group_count()).map(|g| format!("selected[{}]", schema.group_label(g))));
        cols.push("mean_loss".into());
        cols.push("updated".into());
        cols.join(",")
    }

    /// CSV rows (no header) tagged with `fold`.
    pub fn csv_rows(&self, schema: &DemographicSchema, fold: usize) -> String {
        let mut out = String::new();
        for b in &self.batches {
            let mut row = vec![
                fold.to_string(),
                b.epoch.to_string(),
                b.batch.to_string(),
                b.candidates.to_string(),
                b.selected.to_string(),
            ];
            row.extend((0..schema.group_count()).map(|g| b.selected_per_group.get(&g).copied().unwrap_or(0).to_string()));
            row.push(format!("{:.9e}", b.mean_loss));
            row.push(b.updated.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Trains a head on `dataset`.
///
/// Each epoch draws balanced batches until the identities run out. For each
/// batch every sample is projected once in train mode, triplets are
/// enumerated, the semi-hard ones under the current projection are kept and
/// one Adam step is taken on their mean loss.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(DebiasHead, TrainLog), HeadError> {
    config.validate()?;
    let mut head = init_head(
        dataset.dim,
        config.dropout_rate,
        config.margin,
        rng::substream(config.seed, "head-init"),
    )?;
    let mut sampler = BatchSampler::new(
        dataset,
        config.identities_per_batch,
        config.per_identity,
        rng::substream(config.seed, "batches"),
    )?;
    let batches = sampler.batches_per_epoch();
    if batches == 0 {
        // Surfaces the exhaustion error with the offending group.
        sampler.sample_batch()?;
    }
    let mut dropout_rng = rng::seeded(rng::substream(config.seed, "dropout"));
    let mut cap_rng = rng::seeded(rng::substream(config.seed, "negative-cap"));
    let mut adam = AdamState::new(head.weights.len(), config.adam);
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        if epoch > 0 {
            sampler.start_epoch();
        }
        for b in 0..batches {
            let batch = sampler.sample_batch()?;
            let projections = batch
                .sample_refs
                .iter()
                .map(|&r| {
                    let x = &dataset.records[r].vector;
                    let mask = (head.dropout_rate > 0.0).then(|| head.dropout_mask(&mut dropout_rng));
                    head.project(x, mask.as_deref())
                })
                .collect::<Result<Vec<_>, _>>()?;
            let candidates = enumerate_slots(
                &batch,
                config.mode,
                config.max_negatives_per_pair.map(|c| (c, &mut cap_rng)),
            );
            let selected: Vec<SlotTriplet> = candidates
                .iter()
                .filter(|t| {
                    let a = &projections[t.anchor].phi;
                    is_semi_hard(
                        squared_distance(a, &projections[t.positive].phi),
                        squared_distance(a, &projections[t.negative].phi),
                        head.margin,
                    )
                })
                .copied()
                .collect();
            let mut per_group = BTreeMap::new();
            for t in &selected {
                *per_group.entry(batch.group_of_slot(t.anchor)).or_insert(0) += 1;
            }
            let mut entry = BatchLog {
                epoch,
                batch: b,
                candidates: candidates.len(),
                selected: selected.len(),
                selected_per_group: per_group,
                mean_loss: 0.0,
                updated: false,
            };
            if !selected.is_empty() {
                let (loss, grad) = batch_objective(&head, &projections, &selected);
                adam_step(&mut head, &mut adam, &grad)?;
                entry.mean_loss = loss;
                entry.updated = true;
            }
            log.batches.push(entry);
        }
    }
    Ok((head, log))
}
