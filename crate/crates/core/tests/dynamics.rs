mod common;

use common::oracles::oracle_effective_rank;
use metatrain::dynamics::{
    attention_entropy, detect_knee, effective_rank, head_stats, snapshot, weight_stats, Kind,
    MONITORED,
};
use metatrain::model::{head_weight, xavier_uniform, Backbone, HeadSpec, ModelConfig, TaskHead};
use metatrain::numcore::{singular_values, Matrix};
use metatrain::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn effective_rank_matches_formula_oracle_on_random_spectra() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let d = rng.random_range(1..40);
        let mut sigma: Vec<f64> = (0..d)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..10.0)
                }
            })
            .collect();
        sigma[0] += 0.1;
        let (er, per) = effective_rank(&sigma, None).unwrap();
        let o = oracle_effective_rank(&sigma);
        assert!((er - o).abs() <= 1e-10 * o.max(1.0), "{er} vs {o}");
        assert!((per - o / d as f64).abs() <= 1e-10);
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

#[test]
fn per_is_invariant_under_orthogonal_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let w = common::random_matrix(&mut rng, 7, 5);
        let u = random_orthogonal(&mut rng, 7);
        let v = random_orthogonal(&mut rng, 5);
        let wd = DMatrix::from_row_slice(7, 5, w.data());
        let r = u * wd * v;
        let rotated = Matrix::from_fn(7, 5, |i, j| r[(i, j)]);
        let a = effective_rank(&singular_values(&w).unwrap(), None)
            .unwrap()
            .1;
        let b = effective_rank(&singular_values(&rotated).unwrap(), None)
            .unwrap()
            .1;
        assert!((a - b).abs() < 1e-8);
    }
}

proptest! {
    #[test]
    fn effective_rank_is_scale_and_permutation_invariant_and_bounded(
        sigma in prop::collection::vec(0.0f64..5.0, 1..30),
        c in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let mut sigma = sigma;
        sigma[0] += 1e-3;
        let (er, per) = effective_rank(&sigma, None).unwrap();
        let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        let (er_c, _) = effective_rank(&scaled, None).unwrap();
        prop_assert!((er - er_c).abs() <= 1e-12 * er);
        let mut shuffled = sigma.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let (er_p, _) = effective_rank(&shuffled, None).unwrap();
        prop_assert!((er - er_p).abs() <= 1e-12 * er);
        let nonzero = sigma.iter().filter(|s| **s > 0.0).count() as f64;
        prop_assert!(er >= 1.0 && er <= nonzero);
        prop_assert!(per > 0.0 && per <= 1.0);
    }
}

#[test]
fn attention_entropy_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let t = rng.random_range(2..12);
        let mut m = Matrix::zeros(t, t);
        for i in 0..t {
            let raw: Vec<f64> = (0..=i).map(|_| rng.random_range(0.0..1.0)).collect();
            let z: f64 = raw.iter().sum();
            for (j, r) in raw.iter().enumerate() {
                m.set(i, j, r / z);
            }
        }
        let mut plain = 0.0;
        let mut norm = 0.0;
        for i in 0..t {
            let mut h = 0.0;
            for j in 0..=i {
                let a = m.get(i, j);
                if a > 0.0 {
                    h -= a * a.ln();
                }
            }
            assert!(h <= ((i + 1) as f64).ln() + 1e-12);
            plain += h;
            if i > 0 {
                norm += h / ((i + 1) as f64).ln();
            }
        }
        assert!((attention_entropy(&m, false).unwrap() - plain / t as f64).abs() < 1e-10);
        assert!((attention_entropy(&m, true).unwrap() - norm / (t - 1) as f64).abs() < 1e-10);
    }
}

#[test]
fn head_stats_small_cases_and_two_pass_oracle() {
    assert_eq!(weight_stats([Matrix::zeros(3, 3)].iter()), (0.0, 0.0));
    let two = Matrix::new(1, 2, vec![1.0, -1.0]).unwrap();
    assert_eq!(weight_stats([two].iter()), (0.0, 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = HeadSpec {
        input_dim: 16,
        hidden_dim: 32,
        n_layers: 4,
        n_classes: 8,
        dropout: 0.1,
    };
    let mut head = TaskHead::init(spec, &mut rng).unwrap();
    for v in head.params.get_mut(&head_weight(1)).unwrap().data_mut() {
        *v += 0.3;
    }
    let all: Vec<f64> = head.weights().flat_map(|w| w.data().to_vec()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let (m, s) = head_stats(&head);
    assert!((m - mean).abs() < 1e-12 && (s - var.sqrt()).abs() < 1e-12);
}

#[test]
fn knee_localizes_injected_peak_and_ignores_monotone_and_constant() {
    let window = 5;
    let spacing = 100;
    let curve: Vec<(u64, f64)> = (0..=60)
        .map(|i| {
            let step = i * spacing;
            let v = if step <= 3000 {
                0.5 + 0.3 * step as f64 / 3000.0
            } else {
                0.8 - 0.4 * (step - 3000) as f64 / 3000.0
            };
            (step, v)
        })
        .collect();
    let r = detect_knee("v", &curve, window, None).unwrap();
    assert!(r.detected);
    assert!(r.peak_step.abs_diff(3000) <= window as u64 * spacing);

    let down: Vec<(u64, f64)> = (0..30).map(|i| (i, 1.0 - i as f64 * 0.01)).collect();
    assert!(!detect_knee("v", &down, window, None).unwrap().detected);
    let flat: Vec<(u64, f64)> = (0..30).map(|i| (i, 0.7)).collect();
    assert!(!detect_knee("v", &flat, window, None).unwrap().detected);
}

fn one_layer() -> Backbone {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        n_kv_heads: 1,
        ffn_hidden: 24,
        vocab_size: 20,
        seq_len: 8,
        ..ModelConfig::default()
    };
    Backbone::init(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
}

#[test]
fn snapshot_cardinality_and_frozen_layers() {
    let b = one_layer();
    let names: Vec<String> = MONITORED.iter().map(|s| s.to_string()).collect();
    let grads = std::collections::BTreeMap::new();
    let snaps = snapshot(&b, Some(&grads), 7, &names).unwrap();
    assert_eq!(snaps.len(), 6);
    assert_eq!(
        snaps
            .iter()
            .filter(|s| s.kind == Kind::Gradients && s.zero)
            .count(),
        3
    );
    assert_eq!(snapshot(&b, None, 7, &names).unwrap().len(), 3);
    let again = snapshot(&b, None, 8, &names).unwrap();
    for (a, c) in snapshot(&b, None, 7, &names).unwrap().iter().zip(&again) {
        assert_eq!(a.sigma, c.sigma);
    }
    let err = snapshot(&b, None, 0, &["attention.nope".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Config { .. }));
}

#[test]
fn xavier_square_matrices_have_high_per() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 1.0;
    for _ in 0..100 {
        let w = xavier_uniform(64, 64, &mut rng);
        let (_, per) = effective_rank(&singular_values(&w).unwrap(), None).unwrap();
        worst = worst.min(per);
    }
    assert!(worst > 0.7, "{worst}");
}
