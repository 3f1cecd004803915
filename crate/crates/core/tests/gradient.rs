//! Analytic head gradients against central finite differences.

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use sensitive_loss::head::{loss_gradient, DebiasHead};
use sensitive_loss::rng;

const H: f64 = 1e-5;

fn random_unit(r: &mut rng::SeededRng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Loss as a plain function of the weights: normalize, square distances, hinge.
fn loss_at(weights: &[f64], dim: usize, xs: [&[f64]; 3], margin: f64) -> f64 {
    let phi = |x: &[f64]| {
        let y: Vec<f64> = (0..dim)
            .map(|i| (0..dim).map(|j| weights[i * dim + j] * x[j]).sum())
            .collect();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.into_iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let (a, p, n) = (phi(xs[0]), phi(xs[1]), phi(xs[2]));
    let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (d(&a, &p) - d(&a, &n) + margin).max(0.0)
}

fn gap(weights: &[f64], dim: usize, xs: [&[f64]; 3], margin: f64) -> f64 {
    // Loss before the hinge; the hinge is at 0.
    loss_at(weights, dim, xs, margin + 1e3) - 1e3
}

/// Max |analytic − numeric| over max |numeric|.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

fn numeric_gradient(weights: &[f64], dim: usize, xs: [&[f64]; 3], margin: f64) -> Vec<f64> {
    let mut w = weights.to_vec();
    (0..w.len())
        .map(|k| {
            let orig = w[k];
            w[k] = orig + H;
            let up = loss_at(&w, dim, xs, margin);
            w[k] = orig - H;
            let down = loss_at(&w, dim, xs, margin);
            w[k] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Returns (checked instances, worst relative error).
pub fn gradient_check(instances: usize, dim: usize, seed: u64) -> (usize, f64) {
    let mut r = rng::seeded(seed);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < instances {
        let weights: Vec<f64> = (0..dim * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let margin = r.random_range(0.05..1.5);
        let (xa, xp, xn) = (random_unit(&mut r, dim), random_unit(&mut r, dim), random_unit(&mut r, dim));
        let xs = [xa.as_slice(), xp.as_slice(), xn.as_slice()];
        let pre = gap(&weights, dim, xs, margin);
        if pre <= 1e-6 {
            // Inactive or on the hinge boundary.
            continue;
        }
        let head = DebiasHead { dim, weights: weights.clone(), dropout_rate: 0.0, margin };
        let (loss, analytic) = loss_gradient(&head, &xa, &xp, &xn, [None; 3]).unwrap();
        assert!((loss - loss_at(&weights, dim, xs, margin)).abs() < 1e-12);
        let numeric = numeric_gradient(&weights, dim, xs, margin);
        worst = worst.max(relative_error(&analytic, &numeric));
        checked += 1;
    }
    (checked, worst)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let (n, worst) = gradient_check(150, 8, 2024);
    assert_eq!(n, 150);
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn masked_gradient_matches_finite_differences() {
    let dim = 6;
    let mut r = rng::seeded(5);
    let weights: Vec<f64> = (0..dim * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let head = DebiasHead { dim, weights: weights.clone(), dropout_rate: 0.3, margin: 5.0 };
    let xs: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut r, dim)).collect();
    let masks: Vec<Vec<f64>> = (0..3).map(|_| head.dropout_mask(&mut r)).collect();
    let masked: Vec<Vec<f64>> = xs.iter().zip(&masks).map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect()).collect();
    let (_, analytic) = loss_gradient(
        &head,
        &xs[0],
        &xs[1],
        &xs[2],
        [Some(&masks[0]), Some(&masks[1]), Some(&masks[2])],
    )
    .unwrap();
    let numeric = numeric_gradient(&weights, dim, [&masked[0], &masked[1], &masked[2]], 5.0);
    assert!(relative_error(&analytic, &numeric) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scaling W leaves φ unchanged, so the gradient is orthogonal to W.
    #[test]
    fn gradient_is_orthogonal_to_weights(seed in any::<u64>()) {
        let dim = 8;
        let mut r = rng::seeded(seed);
        let weights: Vec<f64> = (0..dim * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let head = DebiasHead { dim, weights: weights.clone(), dropout_rate: 0.0, margin: 2.0 };
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut r, dim)).collect();
        let (_, g) = loss_gradient(&head, &xs[0], &xs[1], &xs[2], [None; 3]).unwrap();
        let inner: f64 = g.iter().zip(&weights).map(|(a, b)| a * b).sum();
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt() * weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(inner.abs() <= 1e-8 * scale.max(1.0), "inner {inner:e}");
    }

    #[test]
    fn inactive_hinge_contributes_nothing(seed in any::<u64>()) {
        let dim = 5;
        let mut r = rng::seeded(seed);
        let weights: Vec<f64> = (0..dim * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_unit(&mut r, dim)).collect();
        let refs = [xs[0].as_slice(), xs[1].as_slice(), xs[2].as_slice()];
        // Pick a margin that deactivates the hinge.
        let pre = gap(&weights, dim, refs, 0.0);
        prop_assume!(pre < -1e-3);
        let margin = -pre / 2.0;
        let head = DebiasHead { dim, weights, dropout_rate: 0.0, margin };
        let (loss, g) = loss_gradient(&head, &xs[0], &xs[1], &xs[2], [None; 3]).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assert!(g.iter().all(|&v| v == 0.0));
    }
}
