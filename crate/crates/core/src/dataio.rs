//! Data plumbing: a synthetic non-IID federation generator with planted
//! ground truth, the connectivity feature pipeline from ROI time series, and
//! the text matrix format used by the CLI.
//!
//! Matrix file format: first line `rows cols`, then `rows` lines of `cols`
//! space-separated decimal floats (shortest round-trip encoding). Labels are
//! one 0/1 integer per line.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::types::{DataMatrix, Dictionary, Labels};

/// Correlations are clamped to +-(1 - CORR_CLAMP) before the Fisher
/// transform so features stay finite.
pub const CORR_CLAMP: f64 = 1e-7;

/// Recipe for a planted federation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub atom_count: usize,
    pub global_count: usize,
    pub site_sizes: Vec<usize>,
    /// Nonzeros per code column.
    pub sparsity: usize,
    pub noise_std: f64,
    /// Minimum |w' s| separating the two classes in code space.
    pub margin: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Desk-scale federation paired with `Hyperparams::quickstart`.
    pub fn quickstart() -> Self {
        Self {
            feature_dim: 64,
            atom_count: 16,
            global_count: 10,
            site_sizes: vec![150, 150, 150, 150],
            sparsity: 2,
            noise_std: 0.02,
            margin: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_count > self.atom_count {
            return Err(Error::Config(format!(
                "global atom count {} exceeds atom count {}",
                self.global_count, self.atom_count
            )));
        }
        if self.feature_dim == 0 || self.atom_count == 0 {
            return Err(Error::Config("feature and atom counts must be positive".into()));
        }
        if self.site_sizes.is_empty() || self.site_sizes.contains(&0) {
            return Err(Error::Config("every site needs at least one sample".into()));
        }
        if self.sparsity == 0 || self.sparsity > self.atom_count {
            return Err(Error::Config(format!(
                "sparsity {} must be in 1..={}",
                self.sparsity, self.atom_count
            )));
        }
        if self.noise_std < 0.0 || self.noise_std.is_nan() {
            return Err(Error::Config(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        if self.margin < 0.0 || self.margin.is_nan() {
            return Err(Error::Config(format!("margin must be nonnegative, got {}", self.margin)));
        }
        Ok(())
    }
}

/// The planted model behind a synthetic federation.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// d x g atoms shared by every site.
    pub global_atoms: Array2<f64>,
    /// d x (k - g) atoms per site.
    pub local_atoms: Vec<Array2<f64>>,
    /// k x n_i true codes per site.
    pub codes: Vec<Array2<f64>>,
    /// Planted classifier direction per site (unit norm, length k).
    pub classifier_dirs: Vec<Array1<f64>>,
}

impl GroundTruth {
    /// Assemble site i's true dictionary `[global | local_i]`.
    pub fn site_dictionary(&self, site: usize) -> Result<Dictionary> {
        let global = self.global_atoms.view();
        let local = self.local_atoms[site].view();
        let values = ndarray::concatenate(ndarray::Axis(1), &[global, local])
            .expect("blocks share the feature dimension");
        Dictionary::new(values, self.global_atoms.ncols())
    }
}

fn random_unit_columns(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut values = Array2::from_shape_fn((d, count), |_| rng.sample::<f64, _>(StandardNormal));
    for mut col in values.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
    values
}

fn sample_support(k: usize, sparsity: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::index::sample;
    sample(rng, k, sparsity).into_vec()
}

/// Draw the planted federation: shared global atoms, per-site local atoms,
/// sparse codes with the requested support size, labels from the sign of a
/// planted linear rule in code space (enforcing the separation margin), and
/// data `X_i = D_i S_i + noise`.
pub fn generate_synthetic_federation(
    spec: &SyntheticSpec,
) -> Result<(Vec<(DataMatrix, Labels)>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, k, g) = (spec.feature_dim, spec.atom_count, spec.global_count);

    let global_atoms = random_unit_columns(d, g, &mut rng);
    // The global part of the discriminative direction is shared, so the
    // label rule rides mostly on the federated atoms.
    let shared_dir: Array1<f64> = Array1::from_shape_fn(g, |_| rng.sample::<f64, _>(StandardNormal));

    let mut sites = Vec::with_capacity(spec.site_sizes.len());
    let mut local_atoms = Vec::with_capacity(spec.site_sizes.len());
    let mut all_codes = Vec::with_capacity(spec.site_sizes.len());
    let mut classifier_dirs = Vec::with_capacity(spec.site_sizes.len());

    for &n in &spec.site_sizes {
        let locals = random_unit_columns(d, k - g, &mut rng);
        let dict_values = ndarray::concatenate(
            ndarray::Axis(1),
            &[global_atoms.view(), locals.view()],
        )
        .expect("blocks share the feature dimension");

        let mut direction = Array1::zeros(k);
        for i in 0..g {
            direction[i] = shared_dir[i];
        }
        for i in g..k {
            direction[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let dir_norm = direction.dot(&direction).sqrt();
        direction.mapv_inplace(|v| v / dir_norm);

        let mut codes = Array2::zeros((k, n));
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let mut score = 0.0;
            let mut column = Array1::zeros(k);
            for attempt in 0..64 {
                column.fill(0.0);
                // Nonzero magnitudes stay away from zero so every support
                // entry genuinely activates its atom.
                for &atom in &sample_support(k, spec.sparsity, &mut rng) {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    column[atom] = sign * (0.6 + 0.9 * rng.random::<f64>());
                }
                score = column.dot(&direction);
                if score.abs() >= spec.margin || attempt == 63 {
                    break;
                }
            }
            if score.abs() < spec.margin {
                // Rescale the drawn support so the sample sits exactly on the
                // margin rather than inside it.
                if score == 0.0 {
                    column[0] = spec.margin / direction[0].abs().max(1e-9);
                    score = column.dot(&direction);
                } else {
                    let factor = spec.margin / score.abs();
                    column.mapv_inplace(|v| v * factor);
                    score *= factor;
                }
            }
            codes.column_mut(j).assign(&column);
            labels.push(u8::from(score > 0.0));
        }

        let mut data = dict_values.dot(&codes);
        if spec.noise_std > 0.0 {
            data = data
                + Array2::from_shape_fn((d, n), |_| {
                    spec.noise_std * rng.sample::<f64, _>(StandardNormal)
                });
        }

        sites.push((DataMatrix::new(data)?, Labels::new(labels)?));
        local_atoms.push(locals);
        all_codes.push(codes);
        classifier_dirs.push(direction);
    }

    Ok((
        sites,
        GroundTruth {
            global_atoms,
            local_atoms,
            codes: all_codes,
            classifier_dirs,
        },
    ))
}

/// Fisher-transformed lower-triangle connectivity vector, length m(m-1)/2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityFeature {
    values: Array1<f64>,
}

impl ConnectivityFeature {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn roi_count(&self) -> Option<usize> {
        roi_count_for_feature_len(self.len())
    }
}

/// Invert m(m-1)/2 = len; `None` when len is not a triangular number.
pub fn roi_count_for_feature_len(len: usize) -> Option<usize> {
    let m = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    (m >= 2 && m * (m - 1) / 2 == len).then_some(m)
}

/// Pairwise Pearson correlations of the ROI rows, clamped, Fisher
/// z-transformed, and vectorized as the strict lower triangle stacked column
/// by column (entry (i, j) with i > j appears within column j's run).
pub fn pearson_fisher_features(timeseries: &Array2<f64>) -> Result<ConnectivityFeature> {
    let m = timeseries.nrows();
    let t = timeseries.ncols();
    if t < 3 {
        return Err(Error::Config(format!(
            "need at least 3 time points per ROI, got {t}"
        )));
    }
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 ROI rows, got {m}")));
    }

    let mut centered = timeseries.clone();
    let mut ssd = Vec::with_capacity(m);
    for (row_idx, mut row) in centered.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / t as f64;
        row.mapv_inplace(|v| v - mean);
        let s: f64 = row.iter().map(|v| v * v).sum();
        let scale: f64 = timeseries.row(row_idx).iter().map(|v| v * v).sum();
        if s <= 1e-24 * scale.max(1e-300) {
            return Err(Error::DegenerateInput(format!(
                "ROI row {row_idx} has zero variance"
            )));
        }
        ssd.push(s);
    }

    let mut values = Array1::zeros(m * (m - 1) / 2);
    let mut idx = 0;
    for j in 0..m {
        for i in (j + 1)..m {
            let cov: f64 = centered
                .row(i)
                .iter()
                .zip(centered.row(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            let r = (cov / (ssd[i] * ssd[j]).sqrt()).clamp(-1.0 + CORR_CLAMP, 1.0 - CORR_CLAMP);
            values[idx] = r.atanh();
            idx += 1;
        }
    }
    Ok(ConnectivityFeature { values })
}

/// Rebuild the symmetric zero-diagonal m x m matrix whose strict lower
/// triangle (column-stacked) is `v`. Inverse of the vectorization used by
/// [`pearson_fisher_features`].
pub fn devectorize_lower_triangle(v: ArrayView1<'_, f64>, m: usize) -> Result<Array2<f64>> {
    let expected = m * (m.saturating_sub(1)) / 2;
    if v.len() != expected {
        return Err(Error::shape(
            "devectorize_lower_triangle",
            format!("{expected} entries for {m} ROIs"),
            format!("{} entries", v.len()),
        ));
    }
    let mut matrix = Array2::zeros((m, m));
    let mut idx = 0;
    for j in 0..m {
        for i in (j + 1)..m {
            matrix[[i, j]] = v[idx];
            matrix[[j, i]] = v[idx];
            idx += 1;
        }
    }
    Ok(matrix)
}

/// Write a matrix in the text format; the float encoding round-trips exactly.
pub fn save_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut line = String::new();
    writeln!(out, "{} {}", matrix.nrows(), matrix.ncols()).map_err(|e| Error::io(path, e))?;
    for row in matrix.rows() {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v}").expect("writing to a String cannot fail");
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s, &line[s..]));
    }
    tokens
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (header_idx, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            line: 1,
            column: 1,
            message: "empty file".into(),
        })?;
    let header_tokens = tokenize(header);
    if header_tokens.len() != 2 {
        return Err(Error::Parse {
            path: path.into(),
            line: header_idx + 1,
            column: 1,
            message: format!("expected `rows cols`, got {} tokens", header_tokens.len()),
        });
    }
    let parse_dim = |&(col, tok): &(usize, &str)| -> Result<usize> {
        tok.parse().map_err(|_| Error::Parse {
            path: path.into(),
            line: header_idx + 1,
            column: col + 1,
            message: format!("invalid dimension `{tok}`"),
        })
    };
    let rows = parse_dim(&header_tokens[0])?;
    let cols = parse_dim(&header_tokens[1])?;

    let mut values = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (line_idx, line) in lines {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            continue;
        }
        if seen_rows == rows {
            return Err(Error::Format {
                path: path.into(),
                line: line_idx + 1,
                message: format!("extra data after {rows} declared rows"),
            });
        }
        if tokens.len() != cols {
            return Err(Error::Format {
                path: path.into(),
                line: line_idx + 1,
                message: format!("expected {cols} values, got {}", tokens.len()),
            });
        }
        for (col, tok) in tokens {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: line_idx + 1,
                column: col + 1,
                message: format!("invalid float `{tok}`"),
            })?;
            values.push(v);
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(Error::Format {
            path: path.into(),
            line: text.lines().count(),
            message: format!("expected {rows} rows, found {seen_rows}"),
        });
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|_| Error::Format {
        path: path.into(),
        line: 1,
        message: "inconsistent matrix shape".into(),
    })
}

pub fn save_labels(path: &Path, labels: &Labels) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for v in labels.values() {
        writeln!(out, "{v}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Labels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "0" => values.push(0),
            "1" => values.push(1),
            other => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: line_idx + 1,
                    column: 1,
                    message: format!("expected 0 or 1, got `{other}`"),
                })
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            column: 1,
            message: "empty label file".into(),
        });
    }
    Labels::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::global_alignment;
    use crate::types::SparseCode;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            feature_dim: 50,
            atom_count: 12,
            global_count: 8,
            site_sizes: vec![100, 100, 100, 100],
            sparsity: 3,
            noise_std: 0.01,
            margin: 0.3,
            seed: 42,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec();
        s.validate().unwrap();
        s.global_count = 13;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.sparsity = 0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.site_sizes = vec![100, 0];
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.noise_std = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn one_sparse_noiseless_samples_are_scaled_atoms() {
        let spec = SyntheticSpec {
            sparsity: 1,
            noise_std: 0.0,
            ..small_spec()
        };
        let (sites, truth) = generate_synthetic_federation(&spec).unwrap();
        for (site, (data, _)) in sites.iter().enumerate() {
            let dict = truth.site_dictionary(site).unwrap();
            for j in 0..data.sample_count() {
                let code_col = truth.codes[site].column(j);
                let (atom, &value) = code_col
                    .iter()
                    .enumerate()
                    .find(|(_, v)| **v != 0.0)
                    .expect("one nonzero per column");
                for r in 0..spec.feature_dim {
                    assert_eq!(data.values()[[r, j]], value * dict.values()[[r, atom]]);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let spec = small_spec();
        let (a, _) = generate_synthetic_federation(&spec).unwrap();
        let (b, _) = generate_synthetic_federation(&spec).unwrap();
        for ((xa, ya), (xb, yb)) in a.iter().zip(b.iter()) {
            assert_eq!(xa.values(), xb.values());
            assert_eq!(ya, yb);
        }
    }

    #[test]
    fn noiseless_data_lies_in_the_planted_span() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            ..small_spec()
        };
        let (sites, truth) = generate_synthetic_federation(&spec).unwrap();
        for (site, (data, _)) in sites.iter().enumerate() {
            // Orthonormalize the planted atoms and project each sample out;
            // a residual certifies rank > k, so it must vanish.
            let dict = truth.site_dictionary(site).unwrap();
            let mut basis: Vec<Array1<f64>> = Vec::new();
            for col in dict.values().columns() {
                let mut v = col.to_owned();
                for b in &basis {
                    let proj = v.dot(b);
                    v = v - b * proj;
                }
                let norm = v.dot(&v).sqrt();
                if norm > 1e-10 {
                    basis.push(v / norm);
                }
            }
            for j in 0..data.sample_count() {
                let mut v = data.values().column(j).to_owned();
                let scale = v.dot(&v).sqrt().max(1e-12);
                for b in &basis {
                    let proj = v.dot(b);
                    v = v - b * proj;
                }
                assert!(v.dot(&v).sqrt() / scale < 1e-10);
            }
        }
    }

    #[test]
    fn labels_respect_the_margin() {
        let spec = small_spec();
        let (sites, truth) = generate_synthetic_federation(&spec).unwrap();
        for (site, (_, labels)) in sites.iter().enumerate() {
            for j in 0..labels.len() {
                let score = truth.codes[site].column(j).dot(&truth.classifier_dirs[site]);
                assert!(score.abs() >= spec.margin - 1e-12);
                assert_eq!(labels.values()[j], u8::from(score > 0.0));
            }
        }
    }

    #[test]
    fn all_global_planted_dictionaries_align_with_zero_weight() {
        let spec = SyntheticSpec {
            global_count: 12,
            noise_std: 0.0,
            ..small_spec()
        };
        let (_, truth) = generate_synthetic_federation(&spec).unwrap();
        let dicts: Vec<Dictionary> = (0..4).map(|i| truth.site_dictionary(i).unwrap()).collect();
        let codes: Vec<SparseCode> = truth
            .codes
            .iter()
            .map(|c| SparseCode::new(c.clone()).unwrap())
            .collect();
        let outcome = global_alignment(&dicts, &codes).unwrap();
        assert_eq!(outcome.record.total_weight, 0.0);
    }

    #[test]
    fn pearson_features_clamp_perfect_correlation() {
        let ts = array![
            [1.0, 2.0, 3.0, 4.0],
            [1.0, 2.0, 3.0, 4.0],
            [4.0, -1.0, 2.5, 0.0]
        ];
        let features = pearson_fisher_features(&ts).unwrap();
        // Pair (1, 0) is the first lower-triangle entry.
        assert_abs_diff_eq!(
            features.values()[0],
            (1.0f64 - CORR_CLAMP).atanh(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_features_match_scalar_oracle() {
        let ts = array![
            [0.3, -1.2, 2.0, 0.7, -0.4],
            [1.1, 0.2, -0.9, 0.5, 1.4],
            [-2.0, 0.8, 0.3, -0.6, 1.0]
        ];
        let features = pearson_fisher_features(&ts).unwrap();

        let pearson = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for (&x, &y) in a.iter().zip(b.iter()) {
                cov += (x - ma) * (y - mb);
                va += (x - ma) * (x - ma);
                vb += (y - mb) * (y - mb);
            }
            cov / (va * vb).sqrt()
        };
        let rows: Vec<Vec<f64>> = (0..3).map(|i| ts.row(i).to_vec()).collect();
        let expected = [
            pearson(&rows[1], &rows[0]),
            pearson(&rows[2], &rows[0]),
            pearson(&rows[2], &rows[1]),
        ];
        for (got, exp) in features.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(
                *got,
                exp.clamp(-1.0 + CORR_CLAMP, 1.0 - CORR_CLAMP).atanh(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn independent_rows_have_near_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts = Array2::from_shape_fn((4, 10_000), |_| rng.sample::<f64, _>(StandardNormal));
        let features = pearson_fisher_features(&ts).unwrap();
        for v in features.values() {
            assert!(v.abs() < 0.05, "unexpectedly correlated: {v}");
        }
    }

    #[test]
    fn pearson_features_invariant_under_positive_affine_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ts = Array2::from_shape_fn((5, 64), |_| rng.sample::<f64, _>(StandardNormal));
        let base = pearson_fisher_features(&ts).unwrap();
        let mut rescaled = ts.clone();
        for (i, mut row) in rescaled.rows_mut().into_iter().enumerate() {
            let slope = 0.5 + i as f64;
            let offset = i as f64 * 3.0 - 1.0;
            row.mapv_inplace(|v| slope * v + offset);
        }
        let scaled = pearson_fisher_features(&rescaled).unwrap();
        for (a, b) in base.values().iter().zip(scaled.values().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn degenerate_rows_are_reported() {
        let ts = array![[1.0, 1.0, 1.0, 1.0], [0.1, 0.3, -0.2, 0.5]];
        match pearson_fisher_features(&ts) {
            Err(Error::DegenerateInput(msg)) => assert!(msg.contains("row 0"), "message: {msg}"),
            other => panic!("expected degenerate-input error, got {other:?}"),
        }
        let short = array![[1.0, 2.0], [0.5, -1.0]];
        assert!(pearson_fisher_features(&short).is_err());
    }

    #[test]
    fn devectorize_round_trip_and_hand_case() {
        let v = array![10.0, 20.0, 30.0];
        let m = devectorize_lower_triangle(v.view(), 3).unwrap();
        assert_eq!(m, array![[0.0, 10.0, 20.0], [10.0, 0.0, 30.0], [20.0, 30.0, 0.0]]);

        let zeros = Array1::zeros(6);
        assert_eq!(
            devectorize_lower_triangle(zeros.view(), 4).unwrap(),
            Array2::zeros((4, 4))
        );

        // vectorize(devectorize(v)) is the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Array1::from_shape_fn(10, |_| rng.sample::<f64, _>(StandardNormal));
        let m = devectorize_lower_triangle(v.view(), 5).unwrap();
        let mut idx = 0;
        for j in 0..5 {
            for i in (j + 1)..5 {
                assert_eq!(m[[i, j]], v[idx]);
                idx += 1;
            }
        }

        assert!(devectorize_lower_triangle(v.view(), 4).is_err());
    }

    #[test]
    fn roi_count_inversion() {
        assert_eq!(roi_count_for_feature_len(6105), Some(111));
        assert_eq!(roi_count_for_feature_len(10), Some(5));
        assert_eq!(roi_count_for_feature_len(11), None);
        assert_eq!(roi_count_for_feature_len(1), Some(2));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = Array2::from_shape_fn((5, 7), |_| rng.sample::<f64, _>(StandardNormal));
        save_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn matrix_load_reports_errors_precisely() {
        let dir = tempfile::tempdir().unwrap();

        let bad_width = dir.path().join("w.txt");
        std::fs::write(&bad_width, "2 3\n1 2 3\n4 5 6 7\n").unwrap();
        match load_matrix(&bad_width) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }

        let empty = dir.path().join("e.txt");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(load_matrix(&empty), Err(Error::Parse { .. })));

        let bad_float = dir.path().join("f.txt");
        std::fs::write(&bad_float, "1 2\n0.5 oops\n").unwrap();
        match load_matrix(&bad_float) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 5);
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let missing_rows = dir.path().join("r.txt");
        std::fs::write(&missing_rows, "3 2\n1 2\n").unwrap();
        assert!(matches!(load_matrix(&missing_rows), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.txt");
        let labels = Labels::new(vec![1, 0, 0, 1, 1]).unwrap();
        save_labels(&path, &labels).unwrap();
        assert_eq!(load_labels(&path).unwrap(), labels);

        std::fs::write(&path, "1\n2\n").unwrap();
        assert!(matches!(load_labels(&path), Err(Error::Parse { line: 2, .. })));
    }
}
