mod common;

use std::collections::BTreeMap;

use metatrain::numcore::{forward_backward, singular_values, Matrix, NodeId, Tape};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_fd_error, random_matrix};

const N: usize = 4;

/// Builds `sum(W ⊙ op3(op2(op1(A))))` with ops drawn from `choice`.
fn build(
    tape: &mut Tape,
    params: &BTreeMap<String, Matrix>,
    choice: &[u8; 3],
    w: &Matrix,
) -> NodeId {
    let a = tape.param("a", &params["a"]);
    let b = tape.param("b", &params["b"]);
    let g = tape.param("gain", &params["gain"]);
    let mut x = a;
    for &c in choice {
        x = match c % 11 {
            0 => tape.matmul(x, b).unwrap(),
            1 => tape.matmul_t(x, a).unwrap(),
            2 => tape.add(x, b).unwrap(),
            3 => tape.mul(x, a).unwrap(),
            4 => tape.silu(x),
            5 => tape.scale(x, 0.7),
            6 => tape.rms_norm(x, g, 1e-6).unwrap(),
            7 => tape.causal_softmax(x).unwrap(),
            8 => tape.rope(x, 2, 10_000.0, 1).unwrap(),
            9 => {
                let l = tape.col_slice(x, 0, 1).unwrap();
                let r = tape.col_slice(x, 1, N - 1).unwrap();
                tape.concat_cols(&[r, l]).unwrap()
            }
            _ => tape.row_gather(x, &[3, 1, 1, 0]).unwrap(),
        };
    }
    let wc = tape.constant(w.clone());
    let y = tape.mul(x, wc).unwrap();
    tape.sum(y)
}

#[test]
fn random_three_op_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_overall: f64 = 0.0;
    for trial in 0..200 {
        let choice: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), random_matrix(&mut rng, N, N));
        params.insert("b".to_string(), random_matrix(&mut rng, N, N));
        params.insert(
            "gain".to_string(),
            Matrix::from_fn(1, N, |_, _| rng.random_range(0.5..1.5)),
        );
        let w = random_matrix(&mut rng, N, N);

        let mut tape = Tape::new();
        let loss = build(&mut tape, &params, &choice, &w);
        let grads = forward_backward(&tape, loss).unwrap();

        let mut f = |p: &BTreeMap<String, Matrix>| {
            let mut t = Tape::new();
            let l = build(&mut t, p, &choice, &w);
            t.value(l).data()[0]
        };
        let (err, at) = max_fd_error(&params, &grads, usize::MAX, trial, 1e-4, &mut f);
        assert!(
            err < 1e-4,
            "trial {trial} ops {choice:?}: rel err {err:e} at {at}"
        );
        worst_overall = worst_overall.max(err);
    }
    eprintln!("worst relative error over 200 graphs: {worst_overall:e}");
}

#[test]
fn cross_entropy_node_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = random_matrix(&mut rng, 5, 7).scaled(3.0);
    let targets = [0usize, 6, 3, 3, 1];
    let mut params = BTreeMap::new();
    params.insert("z".to_string(), logits);
    let mut t = Tape::new();
    let z = t.param("z", &params["z"]);
    let l = t.cross_entropy(z, &targets).unwrap();
    let g = forward_backward(&t, l).unwrap();
    let mut f = |p: &BTreeMap<String, Matrix>| {
        let mut t = Tape::new();
        let z = t.constant(p["z"].clone());
        let l = t.cross_entropy(z, &targets).unwrap();
        t.value(l).data()[0]
    };
    let (err, at) = max_fd_error(&params, &g, usize::MAX, 0, 1e-4, &mut f);
    assert!(err < 1e-4, "{err:e} at {at}");
}

fn eigen_oracle(m: &Matrix) -> Vec<f64> {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let ata = a.transpose() * &a;
    let eig = nalgebra::SymmetricEigen::new(ata);
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(m.rows().min(m.cols()));
    s
}

#[test]
fn singular_values_match_symmetric_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let m = random_matrix(&mut rng, 5, 4);
        let ours = singular_values(&m).unwrap();
        let oracle = eigen_oracle(&m);
        assert_eq!(ours.len(), 4);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * oracle[0], "{ours:?} vs {oracle:?}");
        }
    }
}

#[test]
fn svd_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = random_matrix(&mut rng, 17, 9);
    let a = singular_values(&m).unwrap();
    let b = singular_values(&m).unwrap();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn svd_conserves_energy(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, rows, cols).scaled(scale);
        let s = singular_values(&m).unwrap();
        prop_assert_eq!(s.len(), rows.min(cols));
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.iter().all(|v| *v >= 0.0));
        let energy: f64 = s.iter().map(|v| v * v).sum();
        let fro = m.frobenius_sq();
        prop_assert!((energy - fro).abs() <= 1e-8 * fro);
    }
}
