//! Shared test oracles. Nothing here calls into the gradient engine; values
//! are obtained by re-evaluating closures at perturbed inputs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use metatrain::numcore::Matrix;

/// Central finite difference of `f` with respect to one entry.
pub fn central_difference(
    params: &mut BTreeMap<String, Matrix>,
    name: &str,
    idx: usize,
    h: f64,
    f: &mut dyn FnMut(&BTreeMap<String, Matrix>) -> f64,
) -> f64 {
    let orig = params[name].data()[idx];
    params.get_mut(name).unwrap().data_mut()[idx] = orig + h;
    let up = f(params);
    params.get_mut(name).unwrap().data_mut()[idx] = orig - h;
    let down = f(params);
    params.get_mut(name).unwrap().data_mut()[idx] = orig;
    (up - down) / (2.0 * h)
}

/// Norm-wise relative error per parameter matrix:
/// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)` over the checked
/// entries, maximised over parameters. Entry-wise ratios are meaningless for
/// entries many orders below the matrix scale, where O(h^2) truncation
/// dominates.
pub fn max_fd_error(
    params: &BTreeMap<String, Matrix>,
    analytic: &BTreeMap<String, Matrix>,
    per_param: usize,
    seed: u64,
    h: f64,
    f: &mut dyn FnMut(&BTreeMap<String, Matrix>) -> f64,
) -> (f64, String) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let n = params[&name].len();
        let idxs: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let mut at = String::new();
        for idx in idxs {
            let num = central_difference(&mut work, &name, idx, h, f);
            let ana = analytic[&name].data()[idx];
            scale = scale.max(ana.abs()).max(num.abs());
            if (ana - num).abs() > diff {
                diff = (ana - num).abs();
                at = format!("{name}[{idx}] analytic={ana:e} numeric={num:e}");
            }
        }
        let e = if scale == 0.0 { 0.0 } else { diff / scale };
        if e > worst.0 {
            worst = (e, at);
        }
    }
    worst
}

pub fn random_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub mod oracles;
pub mod toy;
