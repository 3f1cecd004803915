//! Balanced batches, triplet enumeration and online semi-hard selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rng::{self, SeededRng};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TripletError {
    #[error("identities_per_batch {identities} is not divisible by the {groups} groups present")]
    NotDivisible { identities: usize, groups: usize },
    #[error("group `{group}` exhausted: {needed} identities needed, {available} left in this epoch")]
    GroupExhausted {
        group: String,
        needed: usize,
        available: usize,
    },
    #[error("subject `{subject}` has {available} samples, {needed} needed per identity")]
    TooFewSamples {
        subject: String,
        needed: usize,
        available: usize,
    },
    #[error("batch shape must be positive (identities_per_batch and per_identity ≥ 1)")]
    EmptyBatch,
}

/// Which negatives a triplet generator admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletMode {
    /// Negatives from any other identity in the batch.
    Unrestricted,
    /// Negatives only from other identities of the anchor's group.
    Restricted,
}

impl fmt::Display for TripletMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TripletMode::Unrestricted => "unrestricted",
            TripletMode::Restricted => "restricted",
        })
    }
}

impl FromStr for TripletMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unrestricted" | "U" | "u" => Ok(TripletMode::Unrestricted),
            "restricted" | "R" | "r" => Ok(TripletMode::Restricted),
            other => Err(format!("unknown triplet mode `{other}` (expected unrestricted|restricted)")),
        }
    }
}

/// A balanced batch of identities.
///
/// Samples are stored identity-major: slot `i * per_identity + j` holds the
/// `j`-th chosen sample of identity `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Record indices into the source dataset.
    pub sample_refs: Vec<usize>,
    pub identities: Vec<String>,
    /// Group index of each identity.
    pub identity_groups: Vec<usize>,
    pub per_identity: usize,
    /// Identity count per group.
    pub group_counts: BTreeMap<usize, usize>,
}

impl Batch {
    pub fn identity_of_slot(&self, slot: usize) -> usize {
        slot / self.per_identity
    }

    pub fn group_of_slot(&self, slot: usize) -> usize {
        self.identity_groups[self.identity_of_slot(slot)]
    }

    /// Slots of each identity.
    fn identity_slots(&self, identity: usize) -> std::ops::Range<usize> {
        identity * self.per_identity..(identity + 1) * self.per_identity
    }
}

/// Draws balanced batches, each identity at most once per epoch.
pub struct BatchSampler<'a> {
    dataset: &'a Dataset,
    /// Subjects per group, sorted by id: (subject_id, record indices).
    subjects: BTreeMap<usize, Vec<(String, Vec<usize>)>>,
    /// Positions into `subjects[group]` not yet used this epoch.
    pools: BTreeMap<usize, Vec<usize>>,
    identities_per_batch: usize,
    per_identity: usize,
    rng: SeededRng,
    epoch: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        dataset: &'a Dataset,
        identities_per_batch: usize,
        per_identity: usize,
        seed: u64,
    ) -> Result<Self, TripletError> {
        if identities_per_batch == 0 || per_identity == 0 {
            return Err(TripletError::EmptyBatch);
        }
        let mut subjects: BTreeMap<usize, Vec<(String, Vec<usize>)>> = BTreeMap::new();
        for (id, info) in dataset.subjects() {
            subjects
                .entry(info.group)
                .or_default()
                .push((id.to_string(), info.records));
        }
        let groups = subjects.len().max(1);
        if identities_per_batch % groups != 0 {
            return Err(TripletError::NotDivisible {
                identities: identities_per_batch,
                groups,
            });
        }
        let mut sampler = Self {
            dataset,
            subjects,
            pools: BTreeMap::new(),
            identities_per_batch,
            per_identity,
            rng: rng::seeded(seed),
            epoch: 0,
        };
        sampler.refill();
        Ok(sampler)
    }

    fn refill(&mut self) {
        self.pools.clear();
        for (&g, list) in &self.subjects {
            let mut order: Vec<usize> = (0..list.len()).collect();
            order.shuffle(&mut self.rng);
            self.pools.insert(g, order);
        }
    }

    /// Starts a new epoch: every identity becomes available again.
    pub fn start_epoch(&mut self) {
        self.epoch += 1;
        self.refill();
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn per_group(&self) -> usize {
        self.identities_per_batch / self.subjects.len().max(1)
    }

    /// Full balanced batches available in one epoch; leftover identities of
    /// larger groups are not used in that epoch.
    pub fn batches_per_epoch(&self) -> usize {
        let per_group = self.per_group();
        self.subjects
            .values()
            .map(|l| l.len() / per_group)
            .min()
            .unwrap_or(0)
    }

    /// Draws the next balanced batch of the current epoch.
    pub fn sample_batch(&mut self) -> Result<Batch, TripletError> {
        let per_group = self.per_group();
        for (&g, pool) in &self.pools {
            if pool.len() < per_group {
                return Err(TripletError::GroupExhausted {
                    group: self.dataset.schema.group_label(g),
                    needed: per_group,
                    available: pool.len(),
                });
            }
        }
        let mut batch = Batch {
            sample_refs: Vec::with_capacity(self.identities_per_batch * self.per_identity),
            identities: Vec::with_capacity(self.identities_per_batch),
            identity_groups: Vec::with_capacity(self.identities_per_batch),
            per_identity: self.per_identity,
            group_counts: BTreeMap::new(),
        };
        for (&g, pool) in self.pools.iter_mut() {
            for _ in 0..per_group {
                let pos = pool.pop().expect("checked above");
                let (id, records) = &self.subjects[&g][pos];
                if records.len() < self.per_identity {
                    return Err(TripletError::TooFewSamples {
                        subject: id.clone(),
                        needed: self.per_identity,
                        available: records.len(),
                    });
                }
                let chosen = index::sample(&mut self.rng, records.len(), self.per_identity);
                batch.sample_refs.extend(chosen.iter().map(|i| records[i]));
                batch.identities.push(id.clone());
                batch.identity_groups.push(g);
                *batch.group_counts.entry(g).or_insert(0) += 1;
            }
        }
        Ok(batch)
    }
}

/// One (anchor, positive, negative) triple of record indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub mode: TripletMode,
}

/// Triplet as batch slots, used internally for distance lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SlotTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Enumerates slot triplets: every ordered (A, P) pair inside each identity
/// crossed with every admissible negative, optionally capped per pair.
pub(crate) fn enumerate_slots(
    batch: &Batch,
    mode: TripletMode,
    cap: Option<(usize, &mut SeededRng)>,
) -> Vec<SlotTriplet> {
    let n_ids = batch.identities.len();
    let mut out = Vec::new();
    let mut negatives: Vec<Vec<usize>> = Vec::with_capacity(n_ids);
    for i in 0..n_ids {
        let g = batch.identity_groups[i];
        negatives.push(
            (0..n_ids)
                .filter(|&j| j != i && (mode == TripletMode::Unrestricted || batch.identity_groups[j] == g))
                .flat_map(|j| batch.identity_slots(j))
                .collect(),
        );
    }
    let mut cap = cap;
    for (i, negs) in negatives.iter().enumerate() {
        for a in batch.identity_slots(i) {
            for p in batch.identity_slots(i) {
                if a == p {
                    continue;
                }
                match cap.as_mut() {
                    Some((limit, rng)) if negs.len() > *limit => {
                        let mut picked = index::sample(*rng, negs.len(), *limit).into_vec();
                        picked.sort_unstable();
                        out.extend(picked.into_iter().map(|k| SlotTriplet {
                            anchor: a,
                            positive: p,
                            negative: negs[k],
                        }));
                    }
                    _ => out.extend(negs.iter().map(|&n| SlotTriplet {
                        anchor: a,
                        positive: p,
                        negative: n,
                    })),
                }
            }
        }
    }
    out
}

fn to_records(batch: &Batch, mode: TripletMode, slots: Vec<SlotTriplet>) -> Vec<TripletIndex> {
    slots
        .into_iter()
        .map(|t| TripletIndex {
            anchor: batch.sample_refs[t.anchor],
            positive: batch.sample_refs[t.positive],
            negative: batch.sample_refs[t.negative],
            mode,
        })
        .collect()
}

/// Exhaustive triplet enumeration over a batch.
pub fn generate_triplets(batch: &Batch, mode: TripletMode) -> Vec<TripletIndex> {
    to_records(batch, mode, enumerate_slots(batch, mode, None))
}

/// Like [`generate_triplets`], keeping at most `cap` uniformly drawn
/// negatives per (A, P) pair.
pub fn generate_triplets_capped<R: Rng>(
    batch: &Batch,
    mode: TripletMode,
    cap: usize,
    seed_source: &mut R,
) -> Vec<TripletIndex> {
    let mut rng = rng::seeded(seed_source.random());
    to_records(batch, mode, enumerate_slots(batch, mode, Some((cap, &mut rng))))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `0 < d²(A,N) − d²(A,P) < margin`.
pub fn is_semi_hard(d2_ap: f64, d2_an: f64, margin: f64) -> bool {
    let gap = d2_an - d2_ap;
    gap > 0.0 && gap < margin
}

/// Keeps the semi-hard triplets under `embed`, preserving order. `embed` is
/// called once per distinct record.
pub fn select_semi_hard<F>(triplets: &[TripletIndex], mut embed: F, margin: f64) -> Vec<TripletIndex>
where
    F: FnMut(usize) -> Vec<f64>,
{
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut out = Vec::new();
    for t in triplets {
        for r in [t.anchor, t.positive, t.negative] {
            cache.entry(r).or_insert_with(|| embed(r));
        }
        let a = &cache[&t.anchor];
        let d_ap = squared_distance(a, &cache[&t.positive]);
        let d_an = squared_distance(a, &cache[&t.negative]);
        if is_semi_hard(d_ap, d_an, margin) {
            out.push(*t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DemographicSchema, EmbeddingRecord};

    pub(crate) fn toy_dataset(groups: usize, ids_per_group: usize, samples: usize) -> Dataset {
        let schema = DemographicSchema::single("g", &["a", "b", "c"][..groups.max(2)]).unwrap();
        let mut records = Vec::new();
        for g in 0..groups {
            for s in 0..ids_per_group {
                for k in 0..samples {
                    let mut v = vec![0.0; 4];
                    v[(g + s + k) % 4] = 1.0;
                    records.push(EmbeddingRecord {
                        subject_id: format!("g{g}s{s:02}"),
                        sample_index: k as u32,
                        classes: vec![g as u16],
                        vector: v,
                    });
                }
            }
        }
        Dataset::new(schema, 4, records, "toy").unwrap()
    }

    #[test]
    fn batch_shape_two_groups() {
        let ds = toy_dataset(2, 4, 3);
        let mut sampler = BatchSampler::new(&ds, 4, 3, 1).unwrap();
        let batch = sampler.sample_batch().unwrap();
        assert_eq!(batch.sample_refs.len(), 12);
        assert_eq!(batch.group_counts.values().copied().collect::<Vec<_>>(), vec![2, 2]);
        for (i, id) in batch.identities.iter().enumerate() {
            for slot in batch.identity_slots(i) {
                assert_eq!(&ds.records[batch.sample_refs[slot]].subject_id, id);
            }
        }
        assert_eq!(sampler.batches_per_epoch(), 2);
    }

    #[test]
    fn indivisible_batch_is_rejected() {
        let ds = toy_dataset(2, 4, 3);
        assert_eq!(
            BatchSampler::new(&ds, 5, 3, 1).err(),
            Some(TripletError::NotDivisible { identities: 5, groups: 2 })
        );
    }

    #[test]
    fn epoch_exhaustion_and_refill() {
        let ds = toy_dataset(2, 4, 3);
        let mut sampler = BatchSampler::new(&ds, 4, 3, 9).unwrap();
        let a = sampler.sample_batch().unwrap();
        let b = sampler.sample_batch().unwrap();
        let mut seen: Vec<_> = a.identities.iter().chain(&b.identities).cloned().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8, "no identity repeats inside an epoch");
        assert!(matches!(sampler.sample_batch(), Err(TripletError::GroupExhausted { .. })));
        sampler.start_epoch();
        assert!(sampler.sample_batch().is_ok());
    }

    #[test]
    fn too_few_samples() {
        let ds = toy_dataset(2, 2, 2);
        let mut sampler = BatchSampler::new(&ds, 2, 3, 0).unwrap();
        assert!(matches!(sampler.sample_batch(), Err(TripletError::TooFewSamples { .. })));
    }

    #[test]
    fn semi_hard_band_edges() {
        assert!(is_semi_hard(0.2, 0.5, 0.4));
        assert!(!is_semi_hard(0.2, 0.5, 0.2));
        assert!(!is_semi_hard(0.3, 0.3, 1.0));
        assert!(!is_semi_hard(0.5, 0.2, 1.0));
    }

    #[test]
    fn capped_enumeration_limits_negatives() {
        let ds = toy_dataset(2, 3, 3);
        let mut sampler = BatchSampler::new(&ds, 6, 3, 2).unwrap();
        let batch = sampler.sample_batch().unwrap();
        let mut rng = rng::seeded(5);
        let capped = generate_triplets_capped(&batch, TripletMode::Unrestricted, 4, &mut rng);
        assert_eq!(capped.len(), 6 * 6 * 4);
        let full = generate_triplets(&batch, TripletMode::Unrestricted);
        assert!(capped.iter().all(|t| full.contains(t)));
        let uncapped = generate_triplets_capped(&batch, TripletMode::Unrestricted, 1000, &mut rng);
        assert_eq!(uncapped, full);
    }
}
