//! Synthetic embedding datasets with group-dependent impostor spread.
//!
//! Each group gets an anchor direction; subject centers scatter around the
//! anchor with a group-specific spread and samples scatter around their
//! subject center with a global noise level. A small spread packs a group's
//! identities close together, which pulls its impostor distances down and
//! raises its EER.
//!
//! Randomness is ChaCha8 seeded with `seed` plus standard normal draws
//! (`rand_distr::StandardNormal`). Draws happen in a fixed order: basis
//! vectors, then for each group in index order, for each subject, the
//! subject offset followed by its samples' noise.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{l2_norm, Dataset, DatasetError, DemographicSchema, EmbeddingRecord};
use crate::rng::{self, SeededRng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub schema: DemographicSchema,
    pub subjects_per_group: usize,
    pub samples_per_subject: usize,
    /// Spread of subject centers around the group anchor, keyed by group
    /// label (class names joined with `/`). Expected norm of an offset.
    pub inter_center_spread: BTreeMap<String, f64>,
    /// Spread of samples around their subject center (expected norm).
    pub intra_subject_noise: f64,
    /// When set, subject offsets of each group live in a private subspace of
    /// this rank instead of the whole space, while sample noise stays
    /// isotropic. A linear map can then trade noise for identity signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_rank: Option<usize>,
    /// Replaced by the experiment's synth substream when run through
    /// [`crate::experiment`].
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        self.schema.check()?;
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.subjects_per_group < 2 {
            return bad("subjects_per_group must be at least 2".into());
        }
        if self.samples_per_subject < 2 {
            return bad("samples_per_subject must be at least 2".into());
        }
        if !(self.intra_subject_noise > 0.0 && self.intra_subject_noise.is_finite()) {
            return bad("intra_subject_noise must be positive".into());
        }
        let groups = self.schema.group_count();
        for g in 0..groups {
            let label = self.schema.group_label(g);
            match self.inter_center_spread.get(&label) {
                None => return bad(format!("inter_center_spread has no entry for group `{label}`")),
                Some(s) if !(*s > 0.0 && s.is_finite()) => {
                    return bad(format!("inter_center_spread for `{label}` must be positive"))
                }
                Some(_) => {}
            }
        }
        if let Some(label) = self
            .inter_center_spread
            .keys()
            .find(|l| self.schema.group_by_label(l).is_none())
        {
            return bad(format!("inter_center_spread names unknown group `{label}`"));
        }
        let needed = groups * (1 + self.offset_rank.unwrap_or(0));
        if self.offset_rank == Some(0) {
            return bad("offset_rank must be at least 1".into());
        }
        if needed > self.dim {
            return bad(format!(
                "{needed} orthogonal directions needed but dim is {}",
                self.dim
            ));
        }
        Ok(())
    }

    fn spread(&self, group: usize) -> f64 {
        self.inter_center_spread[&self.schema.group_label(group)]
    }
}

fn gaussian(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Orthonormal vectors from Gaussian draws by modified Gram-Schmidt with one
/// reorthogonalization pass.
fn orthonormal_basis(rng: &mut SeededRng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = l2_norm(&v);
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

pub fn generate(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let dim = config.dim;
    let groups = config.schema.group_count();
    let rank = config.offset_rank;
    let mut rng = rng::seeded(config.seed);
    let basis = orthonormal_basis(&mut rng, groups * (1 + rank.unwrap_or(0)), dim);
    let (anchors, offset_dirs) = basis.split_at(groups);

    let noise_scale = config.intra_subject_noise / (dim as f64).sqrt();
    let mut records = Vec::with_capacity(groups * config.subjects_per_group * config.samples_per_subject);
    for (g, anchor) in anchors.iter().enumerate() {
        let spread = config.spread(g);
        let classes = config.schema.group_classes(g);
        for s in 0..config.subjects_per_group {
            let mut center = anchor.clone();
            match rank {
                Some(r) => {
                    let z = gaussian(&mut rng, r);
                    let scale = spread / (r as f64).sqrt();
                    for (zi, dir) in z.iter().zip(&offset_dirs[g * r..(g + 1) * r]) {
                        center.iter_mut().zip(dir).for_each(|(c, d)| *c += scale * zi * d);
                    }
                }
                None => {
                    let scale = spread / (dim as f64).sqrt();
                    let z = gaussian(&mut rng, dim);
                    center.iter_mut().zip(&z).for_each(|(c, zi)| *c += scale * zi);
                }
            }
            let subject_id = format!("g{g:02}-s{s:05}");
            for k in 0..config.samples_per_subject {
                let noise = gaussian(&mut rng, dim);
                let mut x: Vec<f64> = center
                    .iter()
                    .zip(&noise)
                    .map(|(c, n)| c + noise_scale * n)
                    .collect();
                let norm = l2_norm(&x);
                x.iter_mut().for_each(|v| *v /= norm);
                records.push(EmbeddingRecord {
                    subject_id: subject_id.clone(),
                    sample_index: k as u32,
                    classes: classes.clone(),
                    vector: x,
                });
            }
        }
    }
    let provenance = format!(
        "synthgen seed={} dim={} groups={} subjects/group={} samples/subject={}",
        config.seed, dim, groups, config.subjects_per_group, config.samples_per_subject
    );
    Ok(Dataset::new(config.schema.clone(), dim, records, provenance)?)
}
