#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use sensitive_loss::rng;
use sensitive_loss::{Dataset, DemographicSchema, EmbeddingRecord};

pub fn schema(groups: usize) -> DemographicSchema {
    let names = ["a", "b", "c", "d", "e", "f"];
    DemographicSchema::single("group", &names[..groups.max(2)]).unwrap()
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    unit(&gaussian(rng, n))
}

/// Dataset of isotropic random unit vectors; subject ids are `s<g>_<i>`.
pub fn random_dataset(seed: u64, groups: usize, subjects_per_group: &[usize], samples: usize, dim: usize) -> Dataset {
    let mut rng = rng::seeded(seed);
    let mut records = Vec::new();
    for g in 0..groups {
        for s in 0..subjects_per_group[g] {
            for k in 0..samples {
                records.push(EmbeddingRecord {
                    subject_id: format!("s{g}_{s:03}"),
                    sample_index: k as u32,
                    classes: vec![g as u16],
                    vector: gaussian(&mut rng, dim),
                });
            }
        }
    }
    Dataset::new(schema(groups), dim, records, "random").unwrap()
}
