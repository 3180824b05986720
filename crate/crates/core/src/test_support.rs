//! Shared helpers for unit tests. Compiled only for `cargo test`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::types::{DataMatrix, Dictionary, SparseCode};

pub(crate) fn random_dict(d: usize, k: usize, rng: &mut impl Rng) -> Dictionary {
    Dictionary::random_unit(d, k, 0, rng).unwrap()
}

pub(crate) fn random_data(d: usize, n: usize, rng: &mut impl Rng) -> DataMatrix {
    DataMatrix::new(Array2::from_shape_fn((d, n), |_| {
        rng.sample::<f64, _>(StandardNormal)
    }))
    .unwrap()
}

pub(crate) fn random_sparse_codes(k: usize, n: usize, rng: &mut impl Rng) -> SparseCode {
    SparseCode::new(Array2::from_shape_fn((k, n), |_| {
        if rng.random::<f64>() < 0.5 {
            0.0
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    }))
    .unwrap()
}

/// Central finite differences of a scalar function over a matrix argument.
pub(crate) fn finite_diff_matrix<F>(f: F, at: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(at.raw_dim());
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let mut plus = at.clone();
            let mut minus = at.clone();
            plus[[i, j]] += h;
            minus[[i, j]] -= h;
            grad[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    grad
}

/// Frobenius relative error of `a` against reference `b`.
pub(crate) fn rel_err_matrix(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}
