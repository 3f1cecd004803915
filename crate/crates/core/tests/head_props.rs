mod common;

use proptest::prelude::*;
use sensitive_loss::fixture::biased_synth;
use sensitive_loss::head::{adam_step, loss_gradient, ForwardMode, HeadMetadata};
use sensitive_loss::triplets::squared_distance;
use sensitive_loss::{
    generate, init_head, rng, train, triplet_loss, AdamConfig, AdamState, DebiasHead, HeadError, TrainConfig,
    TripletMode,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn outputs_have_unit_norm(seed in any::<u64>(), dim in 1usize..=48, dropout in 0.0f64..0.9) {
        let head = init_head(dim, dropout, 0.2, seed).unwrap();
        let mut r = rng::seeded(seed ^ 1);
        let x = common::random_unit(&mut r, dim);
        for phi in [
            head.forward(&x, ForwardMode::Inference),
            head.forward(&x, ForwardMode::Train(&mut r)),
        ] {
            match phi {
                Ok(phi) => {
                    let n = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() <= 1e-9, "norm {}", n);
                }
                // Dropout can zero every input coordinate of a small head.
                Err(HeadError::DegenerateProjection(_)) => prop_assert!(dropout > 0.0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
        prop_assert_eq!(head.embed(&x).unwrap(), head.embed(&x).unwrap());
    }

    #[test]
    fn dropout_masks_are_inverted(seed in any::<u64>(), rate in 0.0f64..0.95) {
        let head = init_head(16, rate, 0.2, 0).unwrap();
        let mask = head.dropout_mask(&mut rng::seeded(seed));
        let keep = 1.0 / (1.0 - rate);
        prop_assert!(mask.iter().all(|&m| m == 0.0 || (m - keep).abs() < 1e-12));
    }
}

#[test]
fn dropout_preserves_the_expected_input() {
    let head = init_head(1000, 0.5, 0.2, 0).unwrap();
    let mut r = rng::seeded(4);
    let mean: f64 = (0..50).flat_map(|_| head.dropout_mask(&mut r)).sum::<f64>() / 50_000.0;
    assert!((mean - 1.0).abs() < 0.02, "mean mask {mean}");
}

#[test]
fn forward_special_cases() {
    let x = common::unit(&[1.0, 2.0, -2.0, 0.5]);
    let id = DebiasHead::identity(4, 0.5, 0.2).unwrap();
    let phi = id.embed(&x).unwrap();
    assert!(phi.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-15));

    let zeros = DebiasHead { weights: vec![0.0; 16], ..id.clone() };
    assert!(matches!(zeros.embed(&x), Err(HeadError::DegenerateProjection(_))));
    assert!(matches!(id.embed(&[0.9, 0.0, 0.0, 0.0]), Err(HeadError::NotUnit(_))));
    assert!(matches!(id.embed(&[1.0, 0.0]), Err(HeadError::Dimension { .. })));
}

#[test]
fn init_bounds_and_configurations() {
    let a = init_head(4, 0.0, 0.2, 17).unwrap();
    assert_eq!(a, init_head(4, 0.0, 0.2, 17).unwrap());
    assert_ne!(a, init_head(4, 0.0, 0.2, 18).unwrap());
    assert!(a.weights.iter().all(|w| (-0.5..=0.5).contains(w)));
    assert_eq!(init_head(2048, 0.5, 0.2, 0).unwrap().weights.len(), 2048 * 2048);
    assert_eq!(init_head(512, 0.05, 0.2, 0).unwrap().dim, 512);
    assert!(matches!(init_head(4, 1.0, 0.2, 0), Err(HeadError::DropoutRate(_))));
    assert!(matches!(init_head(4, -0.1, 0.2, 0), Err(HeadError::DropoutRate(_))));
    assert!(matches!(init_head(4, 0.1, 0.0, 0), Err(HeadError::Margin(_))));
}

#[test]
fn loss_examples() {
    let on_circle = |d2: f64, sign: f64| {
        let c: f64 = 1.0 - d2 / 2.0;
        vec![c, sign * (1.0 - c * c).sqrt()]
    };
    let a = vec![1.0, 0.0];
    assert!(triplet_loss(&a, &a, &on_circle(0.4, 1.0), 0.4).abs() < 1e-12);
    assert_eq!(triplet_loss(&a, &a, &a, 0.4), 0.4);
    let (p, n) = (on_circle(0.3, 1.0), on_circle(0.5, -1.0));
    assert!((squared_distance(&a, &p) - 0.3).abs() < 1e-12);
    assert!((triplet_loss(&a, &p, &n, 0.4) - 0.2).abs() < 1e-12);
}

#[test]
fn adam_basics() {
    let cfg = AdamConfig::default();
    let mut state = AdamState::new(4, cfg);
    assert!(state.m.iter().chain(&state.v).all(|&v| v == 0.0));
    let mut w = vec![0.5, -0.25, 1.0, 2.0];
    state.step(&mut w, &[0.0; 4], 2).unwrap();
    assert_eq!(w, vec![0.5, -0.25, 1.0, 2.0]);
    assert_eq!(state.step_count, 1);

    let mut scalar = vec![0.0];
    let mut s = AdamState::new(1, cfg);
    s.step(&mut scalar, &[1.0], 1).unwrap();
    assert!((scalar[0] + cfg.learning_rate / (1.0 + cfg.epsilon)).abs() < 1e-15);

    let mut s = AdamState::new(4, cfg);
    for i in 0..100 {
        s.step(&mut w, &[1e-3, -2e-3, 5e-4, 0.0], 2).unwrap();
        assert_eq!(s.step_count, i + 1);
    }
    assert!(w.iter().all(|v| v.is_finite()));

    let err = s.step(&mut w, &[0.0, 0.0, f64::NAN, 0.0], 2).unwrap_err();
    assert!(matches!(err, HeadError::NonFiniteGradient { row: 1, col: 0, .. }), "{err}");
    assert_eq!(s.step_count, 100, "a rejected step does not count");
}

/// Mean loss of fixed triplets and its gradient.
fn frozen_objective(head: &DebiasHead, xs: &[Vec<f64>], triplets: &[(usize, usize, usize)]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut grad = vec![0.0; head.weights.len()];
    for &(a, p, n) in triplets {
        let (l, g) = loss_gradient(head, &xs[a], &xs[p], &xs[n], [None; 3]).unwrap();
        total += l;
        grad.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    let k = triplets.len() as f64;
    grad.iter_mut().for_each(|v| *v /= k);
    (total / k, grad)
}

#[test]
fn fifty_adam_steps_lower_a_frozen_batch_loss() {
    let (mut trials, mut improved, mut seed) = (0, 0, 0u64);
    while trials < 100 {
        seed += 1;
        let mut r = rng::seeded(seed);
        let mut head = init_head(8, 0.0, 0.5, seed).unwrap();
        // 4 identities x 3 samples around random centers.
        let xs: Vec<Vec<f64>> = (0..4)
            .flat_map(|_| {
                let c = common::gaussian(&mut r, 8);
                (0..3).map(|_| common::unit(&c.iter().zip(common::gaussian(&mut r, 8)).map(|(c, n)| c + 0.5 * n).collect::<Vec<_>>())).collect::<Vec<_>>()
            })
            .collect();
        let phis: Vec<Vec<f64>> = xs.iter().map(|x| head.embed(x).unwrap()).collect();
        let mut triplets = Vec::new();
        for a in 0..12 {
            for p in 0..12 {
                for n in 0..12 {
                    if a != p && a / 3 == p / 3 && n / 3 != a / 3 {
                        let gap = squared_distance(&phis[a], &phis[n]) - squared_distance(&phis[a], &phis[p]);
                        if gap > 0.0 && gap < head.margin {
                            triplets.push((a, p, n));
                        }
                    }
                }
            }
        }
        if triplets.is_empty() {
            continue;
        }
        trials += 1;
        let (initial, _) = frozen_objective(&head, &xs, &triplets);
        let mut state = AdamState::new(64, AdamConfig::default());
        for _ in 0..50 {
            let (_, g) = frozen_objective(&head, &xs, &triplets);
            adam_step(&mut head, &mut state, &g).unwrap();
        }
        let (after, _) = frozen_objective(&head, &xs, &triplets);
        if after <= initial {
            improved += 1;
        }
    }
    assert!(improved >= 95, "{improved}/100 seeds lowered the loss");
}

fn small_synth() -> sensitive_loss::Dataset {
    let mut cfg = biased_synth(3);
    cfg.dim = 24;
    cfg.subjects_per_group = 30;
    generate(&cfg).unwrap()
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        identities_per_batch: 10,
        margin: 0.5,
        dropout_rate: 0.2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_synth();
    for mode in [TripletMode::Unrestricted, TripletMode::Restricted] {
        let cfg = TrainConfig { mode, ..small_train(9) };
        let (h1, l1) = train(&data, &cfg).unwrap();
        let (h2, l2) = train(&data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(l1, l2);
        assert!(h1.is_finite());
        assert!(l1.updates() > 0);
        let (h3, _) = train(&data, &small_train(10)).unwrap();
        assert_ne!(h1, h3);
    }
}

#[test]
fn vanishing_margin_leaves_the_initialization() {
    let data = small_synth();
    let cfg = TrainConfig { margin: 1e-300, ..small_train(4) };
    let (head, log) = train(&data, &cfg).unwrap();
    assert_eq!(log.updates(), 0);
    assert!(log.batches.iter().all(|b| b.selected == 0 && b.candidates > 0));
    let init = init_head(data.dim, cfg.dropout_rate, cfg.margin, rng::substream(cfg.seed, "head-init")).unwrap();
    assert_eq!(head.weights, init.weights);
}

#[test]
fn head_files_round_trip() {
    let head = init_head(6, 0.3, 0.7, 2).unwrap();
    let meta = HeadMetadata {
        dim: 6,
        dropout_rate: 0.3,
        margin: 0.7,
        config_hash: "abc".into(),
        seed: 2,
        tool_version: sensitive_loss::TOOL_VERSION.into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.slhead");
    head.save(&path, &meta).unwrap();
    let (loaded, loaded_meta) = DebiasHead::load(&path).unwrap();
    assert_eq!(loaded, head.rounded_to_f32());
    assert_eq!(loaded_meta, meta);
    std::fs::write(&path, b"nope").unwrap();
    assert!(DebiasHead::load(&path).is_err());
}
