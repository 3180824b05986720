//! Per-site dictionary learning: unsupervised pretraining updates and the
//! supervised collaborative-regression updates used inside federated rounds.
//!
//! Every update is one explicit gradient (or proximal-gradient) step; the
//! smooth generating objectives carry the scale factors 1/2 on reconstruction,
//! 1/4 on the Gram orthogonality penalty and 1/2 on the classifier ridge, so
//! the steps written here are exactly their gradients.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{ClassifierWeights, DataMatrix, Dictionary, Hyperparams, Labels, SparseCode};

/// Columns with Euclidean norm below this are treated as collapsed atoms.
pub const ZERO_ATOM_NORM: f64 = 1e-12;

const PROB_CLAMP: f64 = 1e-12;

/// Proximal operator of the l1 norm: sign(x) * max(|x| - lam, 0).
pub fn soft_threshold(x: f64, lam: f64) -> f64 {
    debug_assert!(lam >= 0.0);
    let shrunk = x.abs() - lam;
    if shrunk > 0.0 {
        shrunk * x.signum()
    } else {
        0.0
    }
}

/// Elementwise soft threshold.
pub fn soft_threshold_matrix(values: &Array2<f64>, lam: f64) -> Array2<f64> {
    values.mapv(|v| soft_threshold(v, lam))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_triplet(
    context: &'static str,
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
) -> Result<()> {
    if dict.feature_dim() != data.feature_dim()
        || dict.atom_count() != codes.atom_count()
        || codes.sample_count() != data.sample_count()
    {
        return Err(Error::shape(
            context,
            format!(
                "D {}x{}, S {}x{}, X {}x{}",
                data.feature_dim(),
                dict.atom_count(),
                dict.atom_count(),
                data.sample_count(),
                data.feature_dim(),
                data.sample_count()
            ),
            format!(
                "D {}x{}, S {}x{}, X {}x{}",
                dict.feature_dim(),
                dict.atom_count(),
                codes.atom_count(),
                codes.sample_count(),
                data.feature_dim(),
                data.sample_count()
            ),
        ));
    }
    Ok(())
}

fn check_classifier(
    context: &'static str,
    labels: &Labels,
    codes: &SparseCode,
    weights: &ClassifierWeights,
) -> Result<()> {
    if labels.len() != codes.sample_count() || weights.dim() != codes.atom_count() {
        return Err(Error::shape(
            context,
            format!("Y len {}, w len {}", codes.sample_count(), codes.atom_count()),
            format!("Y len {}, w len {}", labels.len(), weights.dim()),
        ));
    }
    Ok(())
}

/// D'(DS - X), the gradient of (1/2)||X - DS||_F^2 in S.
pub fn code_gradient_unsupervised(
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
) -> Result<Array2<f64>> {
    check_triplet("code_gradient_unsupervised", dict, codes, data)?;
    let residual = dict.values.dot(&codes.values) - &data.values;
    Ok(dict.values.t().dot(&residual))
}

/// One ISTA step on the codes with the dictionary held fixed.
pub fn update_codes_unsupervised(
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
    eta: f64,
    eps: f64,
) -> Result<SparseCode> {
    let grad = code_gradient_unsupervised(dict, codes, data)?;
    let stepped = &codes.values - &(grad * eta);
    Ok(SparseCode {
        values: soft_threshold_matrix(&stepped, eps),
    })
}

/// lam_recon * (DS - X)S' + lam_orth * D(D'D - I), the gradient of
/// (lam_recon/2)||X - DS||_F^2 + (lam_orth/4)||D'D - I||_F^2 in D.
pub fn dictionary_gradient(
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
    lam_recon: f64,
    lam_orth: f64,
) -> Result<Array2<f64>> {
    check_triplet("dictionary_gradient", dict, codes, data)?;
    let residual = dict.values.dot(&codes.values) - &data.values;
    let mut grad = residual.dot(&codes.values.t()) * lam_recon;
    if lam_orth != 0.0 {
        let mut gram = dict.values.t().dot(&dict.values);
        for i in 0..gram.nrows() {
            gram[[i, i]] -= 1.0;
        }
        grad = grad + dict.values.dot(&gram) * lam_orth;
    }
    Ok(grad)
}

/// One gradient step on the dictionary with unit reconstruction weight.
/// Does not renormalize; pair with [`normalize_columns`].
pub fn update_dictionary(
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
    eta: f64,
    lam_orth: f64,
) -> Result<Dictionary> {
    update_dictionary_scaled(dict, codes, data, eta, 1.0, lam_orth)
}

/// Dictionary step with an explicit reconstruction weight, as used in the
/// supervised rounds where the reconstruction term carries lambda1.
pub fn update_dictionary_scaled(
    dict: &Dictionary,
    codes: &SparseCode,
    data: &DataMatrix,
    eta: f64,
    lam_recon: f64,
    lam_orth: f64,
) -> Result<Dictionary> {
    let grad = dictionary_gradient(dict, codes, data, lam_recon, lam_orth)?;
    Ok(Dictionary {
        values: &dict.values - &(grad * eta),
        global_count: dict.global_count,
    })
}

/// Rescale every atom to unit norm. Collapsed atoms (norm below
/// [`ZERO_ATOM_NORM`]) are replaced with fresh random unit vectors from the
/// run's generator; the returned count lets callers log the recovery.
pub fn normalize_columns(dict: &Dictionary, rng: &mut impl Rng) -> (Dictionary, usize) {
    let mut values = dict.values.clone();
    let mut recovered = 0;
    for mut col in values.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm < ZERO_ATOM_NORM {
            recovered += 1;
            let mut replacement: Array1<f64> =
                Array1::from_shape_fn(col.len(), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let rnorm = replacement.dot(&replacement).sqrt();
            replacement.mapv_inplace(|v| v / rnorm);
            col.assign(&replacement);
        } else {
            col.mapv_inplace(|v| v / norm);
        }
    }
    (
        Dictionary {
            values,
            global_count: dict.global_count,
        },
        recovered,
    )
}

/// Mean binary logistic loss of the linear classifier over code space.
/// Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
pub fn classification_loss(
    labels: &Labels,
    codes: &SparseCode,
    weights: &ClassifierWeights,
) -> Result<f64> {
    check_classifier("classification_loss", labels, codes, weights)?;
    let n = labels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let scores = codes.values.t().dot(&weights.w) + weights.b;
    let mut total = 0.0;
    for (&y, &z) in labels.values.iter().zip(scores.iter()) {
        let p = sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / n as f64)
}

/// Gradient of `classification_loss + (lam_ridge/2)||w||^2` in (w, b);
/// the bias is excluded from the ridge.
pub fn classifier_gradient(
    labels: &Labels,
    codes: &SparseCode,
    weights: &ClassifierWeights,
    lam_ridge: f64,
) -> Result<(Array1<f64>, f64)> {
    check_classifier("classifier_gradient", labels, codes, weights)?;
    let n = labels.len().max(1) as f64;
    let scores = codes.values.t().dot(&weights.w) + weights.b;
    let errors: Array1<f64> = scores
        .iter()
        .zip(labels.values.iter())
        .map(|(&z, &y)| sigmoid(z) - f64::from(y))
        .collect();
    let grad_w = codes.values.dot(&errors) / n + &weights.w * lam_ridge;
    let grad_b = errors.sum() / n;
    Ok((grad_w, grad_b))
}

/// One gradient step on the classifier: w <- w - eta (dL/dw + lam3 w),
/// b <- b - eta dL/db.
pub fn update_classifier(
    weights: &ClassifierWeights,
    labels: &Labels,
    codes: &SparseCode,
    eta: f64,
    lam3: f64,
) -> Result<ClassifierWeights> {
    let (grad_w, grad_b) = classifier_gradient(labels, codes, weights, lam3)?;
    Ok(ClassifierWeights {
        w: &weights.w - &(grad_w * eta),
        b: weights.b - eta * grad_b,
    })
}

/// dL/dS + lam1 D'(DS - X): the smooth part of the supervised code objective
/// `L(Y, S, w) + (lam1/2)||X - DS||_F^2`.
pub fn code_gradient_supervised(
    codes: &SparseCode,
    dict: &Dictionary,
    data: &DataMatrix,
    labels: &Labels,
    weights: &ClassifierWeights,
    lam1: f64,
) -> Result<Array2<f64>> {
    check_triplet("code_gradient_supervised", dict, codes, data)?;
    check_classifier("code_gradient_supervised", labels, codes, weights)?;
    let n = labels.len().max(1) as f64;
    let scores = codes.values.t().dot(&weights.w) + weights.b;
    let errors: Array1<f64> = scores
        .iter()
        .zip(labels.values.iter())
        .map(|(&z, &y)| (sigmoid(z) - f64::from(y)) / n)
        .collect();
    // Outer product w * errors' gives dL/dS column by column.
    let w_col = weights.w.view().insert_axis(ndarray::Axis(1));
    let err_row = errors.view().insert_axis(ndarray::Axis(0));
    let mut grad = w_col.dot(&err_row);
    let residual = dict.values.dot(&codes.values) - &data.values;
    grad = grad + dict.values.t().dot(&residual) * lam1;
    Ok(grad)
}

/// Proximal step on the codes combining classification and reconstruction
/// gradients, thresholded at eta * lambda2.
pub fn update_codes_supervised(
    codes: &SparseCode,
    dict: &Dictionary,
    data: &DataMatrix,
    labels: &Labels,
    weights: &ClassifierWeights,
    hyper: &Hyperparams,
) -> Result<SparseCode> {
    let grad = code_gradient_supervised(codes, dict, data, labels, weights, hyper.lambda1)?;
    let stepped = &codes.values - &(grad * hyper.eta);
    Ok(SparseCode {
        values: soft_threshold_matrix(&stepped, hyper.code_threshold()),
    })
}

/// ||X - DS||_F^2.
pub fn reconstruction_error_sq(
    data: &DataMatrix,
    dict: &Dictionary,
    codes: &SparseCode,
) -> Result<f64> {
    check_triplet("reconstruction_error_sq", dict, codes, data)?;
    let residual = dict.values.dot(&codes.values) - &data.values;
    Ok(residual.iter().map(|v| v * v).sum())
}

/// Sum of absolute code entries.
pub fn l1_norm(codes: &SparseCode) -> f64 {
    codes.values.iter().map(|v| v.abs()).sum()
}

/// ||D'D - I||_F^2.
pub fn orthogonality_penalty(dict: &Dictionary) -> f64 {
    let mut gram = dict.values.t().dot(&dict.values);
    for i in 0..gram.nrows() {
        gram[[i, i]] -= 1.0;
    }
    gram.iter().map(|v| v * v).sum()
}

/// Unsupervised sparse-coding objective: ||X - DS||_F^2 + lam * ||S||_1.
pub fn reconstruction_objective(
    data: &DataMatrix,
    dict: &Dictionary,
    codes: &SparseCode,
    lam_sparse: f64,
) -> Result<f64> {
    Ok(reconstruction_error_sq(data, dict, codes)? + lam_sparse * l1_norm(codes))
}

/// The full per-site objective:
/// L + lambda1 ||X - DS||_F^2 + lambda2 ||S||_1 + lambda3 ||w||_2^2
///   + lambda4 ||D'D - I||_F^2.
pub fn objective_site(
    data: &DataMatrix,
    labels: &Labels,
    dict: &Dictionary,
    codes: &SparseCode,
    weights: &ClassifierWeights,
    hyper: &Hyperparams,
) -> Result<f64> {
    let loss = classification_loss(labels, codes, weights)?;
    let recon = reconstruction_error_sq(data, dict, codes)?;
    let ridge = weights.w.iter().map(|v| v * v).sum::<f64>();
    Ok(loss
        + hyper.lambda1 * recon
        + hyper.lambda2 * l1_norm(codes)
        + hyper.lambda3 * ridge
        + hyper.lambda4 * orthogonality_penalty(dict))
}

/// Traditional dictionary learning on one site's data: alternate the code
/// step, the dictionary step and column normalization for
/// `hyper.iters_pretrain` rounds from a seeded random start.
///
/// Returns the pretrained pair plus the number of collapsed atoms that had to
/// be re-seeded along the way.
pub fn pretrain_local(
    data: &DataMatrix,
    hyper: &Hyperparams,
    rng: &mut impl Rng,
) -> Result<(Dictionary, SparseCode, usize)> {
    hyper.validate()?;
    let mut dict = Dictionary::random_unit(data.feature_dim(), hyper.k, hyper.g, rng)?;
    let mut codes = SparseCode::zeros(hyper.k, data.sample_count());
    let eps = hyper.code_threshold();
    let mut recovered = 0;
    for it in 0..hyper.iters_pretrain {
        codes = update_codes_unsupervised(&dict, &codes, data, hyper.eta, eps)?;
        dict = update_dictionary(&dict, &codes, data, hyper.eta, hyper.lambda4)?;
        let (normalized, n_rec) = normalize_columns(&dict, rng);
        dict = normalized;
        recovered += n_rec;
        if it % 25 == 24 && !codes.values.sum().is_finite() {
            return Err(Error::InvalidState(format!(
                "pretraining diverged at iteration {it}; lower the learning rate"
            )));
        }
    }
    Ok((dict, codes, recovered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{
        finite_diff_matrix, random_data, random_dict, random_sparse_codes, rel_err_matrix,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_known_values() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_nonexpansive(
            x in -1e3f64..1e3,
            y in -1e3f64..1e3,
            lam in 0.0f64..10.0,
        ) {
            prop_assert_eq!(soft_threshold(-x, lam), -soft_threshold(x, lam));
            let dist = (soft_threshold(x, lam) - soft_threshold(y, lam)).abs();
            let slack = 1e-12 * (x.abs() + y.abs() + 1.0);
            prop_assert!(dist <= (x - y).abs() + slack);
        }
    }

    #[test]
    fn code_update_perfect_reconstruction_is_fixed_point() {
        let dict = Dictionary::new(Array2::eye(2), 0).unwrap();
        let data = DataMatrix::new(array![[0.7], [-1.2]]).unwrap();
        let codes = SparseCode::new(data.values().clone()).unwrap();
        let next = update_codes_unsupervised(&dict, &codes, &data, 0.37, 0.0).unwrap();
        assert_eq!(next.values(), codes.values());
    }

    #[test]
    fn code_update_total_shrinkage_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = random_dict(4, 3, &mut rng);
        let data = random_data(4, 2, &mut rng);
        let codes = SparseCode::zeros(3, 2);
        let next = update_codes_unsupervised(&dict, &codes, &data, 0.1, 1e6).unwrap();
        assert!(next.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn code_update_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dict = random_dict(4, 3, &mut rng);
        let data = random_data(4, 3, &mut rng);
        let codes = random_sparse_codes(3, 3, &mut rng);
        let eta = 0.05;
        let eps = 0.02;
        let got = update_codes_unsupervised(&dict, &codes, &data, eta, eps).unwrap();

        let d = dict.values();
        let s = codes.values();
        let x = data.values();
        for i in 0..3 {
            for j in 0..3 {
                let mut grad = 0.0;
                for r in 0..4 {
                    let mut recon = 0.0;
                    for c in 0..3 {
                        recon += d[[r, c]] * s[[c, j]];
                    }
                    grad += d[[r, i]] * (recon - x[[r, j]]);
                }
                let expected = soft_threshold(s[[i, j]] - eta * grad, eps);
                assert_abs_diff_eq!(got.values()[[i, j]], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn code_update_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = random_dict(4, 3, &mut rng);
        let data = random_data(5, 2, &mut rng);
        let codes = SparseCode::zeros(3, 2);
        assert!(matches!(
            update_codes_unsupervised(&dict, &codes, &data, 0.1, 0.0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn dictionary_update_fixed_points() {
        // Orthonormal atoms with exact reconstruction: both terms vanish.
        let dict = Dictionary::new(Array2::eye(3), 0).unwrap();
        let codes = SparseCode::new(array![[1.0, 0.5], [0.0, -2.0], [3.0, 0.0]]).unwrap();
        let data = DataMatrix::new(dict.values().dot(codes.values())).unwrap();
        let next = update_dictionary(&dict, &codes, &data, 0.3, 2.0).unwrap();
        assert!(rel_err_matrix(next.values(), dict.values()) < 1e-15);

        // Zero codes kill the reconstruction gradient; lam_orth = 0 kills the rest.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dict = random_dict(5, 4, &mut rng);
        let codes = SparseCode::zeros(4, 6);
        let data = random_data(5, 6, &mut rng);
        let next = update_dictionary(&dict, &codes, &data, 0.3, 0.0).unwrap();
        assert_eq!(next.values(), dict.values());
    }

    #[test]
    fn dictionary_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let dict = random_dict(5, 3, &mut rng);
            let codes = random_sparse_codes(3, 4, &mut rng);
            let data = random_data(5, 4, &mut rng);
            let (lam_recon, lam_orth) = (1.0, 0.7);
            let analytic = dictionary_gradient(&dict, &codes, &data, lam_recon, lam_orth).unwrap();
            let objective = |values: &Array2<f64>| {
                let d = Dictionary::new(values.clone(), 0).unwrap();
                lam_recon / 2.0 * reconstruction_error_sq(&data, &d, &codes).unwrap()
                    + lam_orth / 4.0 * orthogonality_penalty(&d)
            };
            let numeric = finite_diff_matrix(objective, dict.values(), 1e-6);
            assert!(rel_err_matrix(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn normalize_columns_known_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dict = Dictionary::new(array![[3.0, 0.2], [4.0, -0.3]], 0).unwrap();
        let (normalized, recovered) = normalize_columns(&dict, &mut rng);
        assert_eq!(recovered, 0);
        assert_abs_diff_eq!(normalized.values()[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(normalized.values()[[1, 0]], 0.8, epsilon = 1e-15);

        let (again, _) = normalize_columns(&normalized, &mut rng);
        assert!(rel_err_matrix(again.values(), normalized.values()) < 1e-12);

        let big = random_dict(12, 7, &mut rng);
        let scaled = Dictionary::new(big.values() * 3.7, 0).unwrap();
        let (unit, _) = normalize_columns(&scaled, &mut rng);
        for col in unit.values().columns() {
            assert_abs_diff_eq!(col.dot(&col).sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_columns_recovers_zero_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let dict = Dictionary::new(array![[0.0, 1.0], [0.0, 1.0]], 0).unwrap();
        let (normalized, recovered) = normalize_columns(&dict, &mut rng);
        assert_eq!(recovered, 1);
        let col = normalized.values().column(0);
        assert_abs_diff_eq!(col.dot(&col).sqrt(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn classification_loss_uninformative_and_saturated() {
        let labels = Labels::new(vec![0, 1, 1, 0]).unwrap();
        let codes = SparseCode::zeros(3, 4);
        let weights = ClassifierWeights::zeros(3);
        let loss = classification_loss(&labels, &codes, &weights).unwrap();
        assert_abs_diff_eq!(loss, 2f64.ln(), epsilon = 1e-15);

        // Perfectly separated scores +-30 matching the labels.
        let codes = SparseCode::new(array![[-30.0, 30.0, 30.0, -30.0]]).unwrap();
        let weights = ClassifierWeights::new(array![1.0], 0.0).unwrap();
        let loss = classification_loss(&labels, &codes, &weights).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn classification_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let codes = random_sparse_codes(4, 6, &mut rng);
        let labels = Labels::new(vec![1, 0, 1, 1, 0, 0]).unwrap();
        let weights = ClassifierWeights::new(
            Array1::from_shape_fn(4, |_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            0.4,
        )
        .unwrap();
        let got = classification_loss(&labels, &codes, &weights).unwrap();

        let mut expected = 0.0;
        for a in 0..6 {
            let mut z = weights.b;
            for i in 0..4 {
                z += weights.w[i] * codes.values()[[i, a]];
            }
            let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-12, 1.0 - 1e-12);
            expected -= if labels.values()[a] == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            };
        }
        expected /= 6.0;
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..5 {
            let codes = random_sparse_codes(4, 7, &mut rng);
            let labels = Labels::new((0..7).map(|i| (i % 2) as u8).collect()).unwrap();
            let weights = ClassifierWeights::new(
                Array1::from_shape_fn(4, |_| {
                    0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }),
                0.2,
            )
            .unwrap();
            let lam3 = 0.8;
            let (grad_w, grad_b) = classifier_gradient(&labels, &codes, &weights, lam3).unwrap();

            let h = 1e-6;
            let objective = |w: &Array1<f64>, b: f64| {
                let cw = ClassifierWeights::new(w.clone(), b).unwrap();
                classification_loss(&labels, &codes, &cw).unwrap()
                    + lam3 / 2.0 * w.iter().map(|v| v * v).sum::<f64>()
            };
            for i in 0..4 {
                let mut plus = weights.w.clone();
                let mut minus = weights.w.clone();
                plus[i] += h;
                minus[i] -= h;
                let numeric = (objective(&plus, weights.b) - objective(&minus, weights.b)) / (2.0 * h);
                assert!((grad_w[i] - numeric).abs() / numeric.abs().max(1e-8) < 1e-5);
            }
            let numeric_b =
                (objective(&weights.w, weights.b + h) - objective(&weights.w, weights.b - h)) / (2.0 * h);
            assert!((grad_b - numeric_b).abs() / numeric_b.abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn classifier_update_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let codes = random_sparse_codes(3, 5, &mut rng);
        let labels = Labels::new(vec![1, 0, 1, 0, 1]).unwrap();
        let weights = ClassifierWeights::new(array![0.3, -0.4, 0.1], 0.7).unwrap();

        // eta = 0 leaves the classifier untouched.
        let same = update_classifier(&weights, &labels, &codes, 0.0, 10.0).unwrap();
        assert_eq!(same, weights);

        // With zero codes the data gradient for w vanishes; a strong ridge
        // shrinks w geometrically while b keeps following the label balance.
        let zero_codes = SparseCode::zeros(3, 5);
        let mut state = ClassifierWeights::new(array![1.0, -2.0, 0.5], 0.0).unwrap();
        let b_before = state.b;
        for _ in 0..400 {
            state = update_classifier(&state, &labels, &zero_codes, 0.05, 2.0).unwrap();
        }
        assert!(state.w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        assert!(state.b != b_before);
    }

    #[test]
    fn supervised_code_update_reduces_to_unsupervised_at_zero_classifier() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let dict = random_dict(5, 4, &mut rng);
        let data = random_data(5, 6, &mut rng);
        let codes = random_sparse_codes(4, 6, &mut rng);
        let labels = Labels::new(vec![0, 1, 0, 1, 1, 0]).unwrap();
        let weights = ClassifierWeights::zeros(4);
        let hyper = Hyperparams {
            lambda1: 1.0,
            eta: 0.03,
            lambda2: 0.4,
            k: 4,
            g: 0,
            ..Hyperparams::default()
        };
        let supervised =
            update_codes_supervised(&codes, &dict, &data, &labels, &weights, &hyper).unwrap();
        let unsupervised =
            update_codes_unsupervised(&dict, &codes, &data, hyper.eta, hyper.code_threshold())
                .unwrap();
        assert!(rel_err_matrix(supervised.values(), unsupervised.values()) < 1e-14);
    }

    #[test]
    fn supervised_code_update_isolates_classification_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let dict = random_dict(5, 3, &mut rng);
        let data = random_data(5, 4, &mut rng);
        let codes = random_sparse_codes(3, 4, &mut rng);
        let labels = Labels::new(vec![1, 0, 0, 1]).unwrap();
        let weights = ClassifierWeights::new(array![0.6, -0.2, 0.9], -0.1).unwrap();
        let hyper = Hyperparams {
            lambda1: 0.0,
            lambda2: 0.0,
            eta: 0.05,
            k: 3,
            g: 0,
            ..Hyperparams::default()
        };
        let got = update_codes_supervised(&codes, &dict, &data, &labels, &weights, &hyper).unwrap();

        // Pure classification-gradient step: S - eta * (1/n) w (sigma - y)'.
        let n = 4.0;
        let mut expected = codes.values().clone();
        for a in 0..4 {
            let mut z = weights.b;
            for i in 0..3 {
                z += weights.w[i] * codes.values()[[i, a]];
            }
            let err = (1.0 / (1.0 + (-z).exp())) - f64::from(labels.values()[a]);
            for i in 0..3 {
                expected[[i, a]] -= hyper.eta * weights.w[i] * err / n;
            }
        }
        assert!(rel_err_matrix(got.values(), &expected) < 1e-12);
    }

    #[test]
    fn supervised_code_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..5 {
            let dict = random_dict(5, 3, &mut rng);
            let data = random_data(5, 4, &mut rng);
            let codes = random_sparse_codes(3, 4, &mut rng);
            let labels = Labels::new(vec![1, 0, 1, 0]).unwrap();
            let weights = ClassifierWeights::new(
                Array1::from_shape_fn(3, |_| {
                    0.7 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }),
                0.3,
            )
            .unwrap();
            let lam1 = 0.9;
            let analytic =
                code_gradient_supervised(&codes, &dict, &data, &labels, &weights, lam1).unwrap();
            let objective = |values: &Array2<f64>| {
                let s = SparseCode::new(values.clone()).unwrap();
                classification_loss(&labels, &s, &weights).unwrap()
                    + lam1 / 2.0 * reconstruction_error_sq(&data, &dict, &s).unwrap()
            };
            let numeric = finite_diff_matrix(objective, codes.values(), 1e-6);
            assert!(rel_err_matrix(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn pretrain_recovers_planted_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (d, k, n) = (20, 10, 200);
        let truth = random_dict(d, k, &mut rng);
        let mut codes = Array2::zeros((k, n));
        for j in 0..n {
            for _ in 0..3 {
                let atom = rng.random_range(0..k);
                codes[[atom, j]] = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let data = DataMatrix::new(truth.values().dot(&codes)).unwrap();

        let hyper = Hyperparams {
            k,
            g: 0,
            eta: 0.003,
            lambda2: 0.01,
            lambda4: 0.1,
            iters_pretrain: 3000,
            ..Hyperparams::default()
        };
        let mut train_rng = ChaCha8Rng::seed_from_u64(48);
        let (dict, learned, _) = pretrain_local(&data, &hyper, &mut train_rng).unwrap();
        let err = reconstruction_error_sq(&data, &dict, &learned).unwrap().sqrt();
        let scale = data.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / scale < 0.1, "relative error {}", err / scale);

        // No worse than the zero-code start, where the objective is ||X||^2.
        let final_objective =
            reconstruction_objective(&data, &dict, &learned, hyper.lambda2).unwrap();
        assert!(final_objective <= scale * scale);
    }

    #[test]
    fn pretrain_handles_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let data = random_data(6, 1, &mut rng);
        let hyper = Hyperparams {
            k: 4,
            g: 2,
            eta: 0.01,
            iters_pretrain: 50,
            ..Hyperparams::default()
        };
        let (dict, codes, _) = pretrain_local(&data, &hyper, &mut rng).unwrap();
        assert_eq!(dict.feature_dim(), 6);
        assert_eq!(dict.atom_count(), 4);
        assert_eq!(codes.sample_count(), 1);
    }

    #[test]
    fn pretrain_objective_is_monotone_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let truth = random_dict(16, 6, &mut rng);
        let mut planted = Array2::zeros((6, 40));
        for j in 0..40 {
            for _ in 0..2 {
                let atom = rng.random_range(0..6);
                planted[[atom, j]] = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let data = DataMatrix::new(truth.values().dot(&planted)).unwrap();

        let hyper = Hyperparams {
            k: 6,
            g: 0,
            eta: 1e-4,
            lambda2: 0.005,
            lambda4: 0.01,
            iters_pretrain: 10,
            ..Hyperparams::default()
        };
        // Drive the same alternation manually so the generating objective can
        // be sampled every 10 iterations.
        let mut dict = Dictionary::random_unit(16, 6, 0, &mut rng).unwrap();
        let mut codes = SparseCode::zeros(6, 40);
        let generating = |d: &Dictionary, s: &SparseCode| {
            0.5 * reconstruction_error_sq(&data, d, s).unwrap()
                + hyper.lambda2 * l1_norm(s)
                + hyper.lambda4 / 4.0 * orthogonality_penalty(d)
        };
        let initial_eq1 = reconstruction_objective(&data, &dict, &codes, hyper.lambda2).unwrap();
        let mut samples = vec![generating(&dict, &codes)];
        for _ in 0..20 {
            for _ in 0..10 {
                codes =
                    update_codes_unsupervised(&dict, &codes, &data, hyper.eta, hyper.code_threshold())
                        .unwrap();
                dict = update_dictionary(&dict, &codes, &data, hyper.eta, hyper.lambda4).unwrap();
                dict = normalize_columns(&dict, &mut rng).0;
            }
            samples.push(generating(&dict, &codes));
        }
        for pair in samples.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "objective rose: {} -> {}", pair[0], pair[1]);
        }
        // The plain sparse-coding objective ends no higher than at the
        // zero-code start.
        let eq1 = reconstruction_objective(&data, &dict, &codes, hyper.lambda2).unwrap();
        assert!(eq1 <= initial_eq1 + 1e-9);
    }

    #[test]
    fn objective_site_isolated_terms_and_linearity() {
        let dict = Dictionary::new(Array2::eye(3), 0).unwrap();
        let codes = SparseCode::zeros(3, 2);
        let data = DataMatrix::new(Array2::zeros((3, 2))).unwrap();
        let labels = Labels::new(vec![0, 1]).unwrap();
        let weights = ClassifierWeights::zeros(3);
        let hyper = Hyperparams {
            k: 3,
            g: 0,
            ..Hyperparams::default()
        };
        let value = objective_site(&data, &labels, &dict, &codes, &weights, &hyper).unwrap();
        assert_abs_diff_eq!(value, 2f64.ln(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let dict = random_dict(4, 3, &mut rng);
        let codes = random_sparse_codes(3, 5, &mut rng);
        let data = random_data(4, 5, &mut rng);
        let labels = Labels::new(vec![1, 1, 0, 0, 1]).unwrap();
        let weights = ClassifierWeights::new(array![0.2, -0.5, 0.8], 0.1).unwrap();
        let hyper = Hyperparams {
            k: 3,
            g: 0,
            lambda2: 0.4,
            ..Hyperparams::default()
        };
        let doubled = Hyperparams {
            lambda2: 0.8,
            ..hyper.clone()
        };
        let base = objective_site(&data, &labels, &dict, &codes, &weights, &hyper).unwrap();
        let more = objective_site(&data, &labels, &dict, &codes, &weights, &doubled).unwrap();
        assert_abs_diff_eq!(more - base, 0.4 * l1_norm(&codes), epsilon = 1e-10);
    }

    #[test]
    fn objective_site_matches_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let dict = random_dict(4, 3, &mut rng);
        let codes = random_sparse_codes(3, 5, &mut rng);
        let data = random_data(4, 5, &mut rng);
        let labels = Labels::new(vec![0, 1, 1, 0, 1]).unwrap();
        let weights = ClassifierWeights::new(array![0.3, -0.6, 0.2], -0.4).unwrap();
        let hyper = Hyperparams {
            k: 3,
            g: 0,
            lambda1: 0.7,
            lambda2: 0.3,
            lambda3: 1.1,
            lambda4: 0.9,
            ..Hyperparams::default()
        };
        let got = objective_site(&data, &labels, &dict, &codes, &weights, &hyper).unwrap();

        let d = dict.values();
        let s = codes.values();
        let x = data.values();
        let mut loss = 0.0;
        for a in 0..5 {
            let mut z = weights.b;
            for i in 0..3 {
                z += weights.w[i] * s[[i, a]];
            }
            let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-12, 1.0 - 1e-12);
            loss -= if labels.values()[a] == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        loss /= 5.0;
        let mut recon = 0.0;
        for r in 0..4 {
            for a in 0..5 {
                let mut v = 0.0;
                for c in 0..3 {
                    v += d[[r, c]] * s[[c, a]];
                }
                recon += (x[[r, a]] - v) * (x[[r, a]] - v);
            }
        }
        let l1: f64 = s.iter().map(|v| v.abs()).sum();
        let ridge: f64 = weights.w.iter().map(|v| v * v).sum();
        let mut orth = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut gram = 0.0;
                for r in 0..4 {
                    gram += d[[r, i]] * d[[r, j]];
                }
                if i == j {
                    gram -= 1.0;
                }
                orth += gram * gram;
            }
        }
        let expected = loss + 0.7 * recon + 0.3 * l1 + 1.1 * ridge + 0.9 * orth;
        assert_abs_diff_eq!(got, expected, epsilon = 1e-10);
        assert!(got >= 0.0);
    }
}
