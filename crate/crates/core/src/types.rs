//! Dense domain types shared by every stage of the pipeline.
//!
//! Samples are stored column-wise throughout: a data matrix is d features by
//! n samples, a dictionary is d by k atoms, a code matrix is k by n.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

fn check_finite(values: &Array2<f64>, context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Observed data, d features by n samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub(crate) values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::shape(
                "DataMatrix::new",
                "at least 1 row and 1 column",
                format!("{}x{}", values.nrows(), values.ncols()),
            ));
        }
        check_finite(&values, "DataMatrix::new")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Feature dimension d.
    pub fn feature_dim(&self) -> usize {
        self.values.nrows()
    }

    /// Sample count n.
    pub fn sample_count(&self) -> usize {
        self.values.ncols()
    }

    /// New matrix holding the given sample columns, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("selected an empty sample set".into()));
        }
        Ok(Self {
            values: self.values.select(ndarray::Axis(1), indices),
        })
    }
}

/// Dictionary of k unit-norm atoms in d dimensions. Columns `[0, global_count)`
/// form the federated global block, the rest stay site-local.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub(crate) values: Array2<f64>,
    pub(crate) global_count: usize,
}

impl Dictionary {
    pub fn new(values: Array2<f64>, global_count: usize) -> Result<Self> {
        if global_count > values.ncols() {
            return Err(Error::Config(format!(
                "global atom count {} exceeds dictionary size {}",
                global_count,
                values.ncols()
            )));
        }
        check_finite(&values, "Dictionary::new")?;
        Ok(Self {
            values,
            global_count,
        })
    }

    /// Atoms drawn i.i.d. standard normal, then column-normalized.
    pub fn random_unit(d: usize, k: usize, global_count: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut values = Array2::from_shape_fn((d, k), |_| rng.sample::<f64, _>(StandardNormal));
        for mut col in values.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
        Self::new(values, global_count)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn feature_dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn global_count(&self) -> usize {
        self.global_count
    }

    pub fn atom(&self, index: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.column(index)
    }

    /// Columns `[0, g)`.
    pub fn global_block(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![.., ..self.global_count])
    }

    /// Columns `[g, k)`.
    pub fn local_block(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![.., self.global_count..])
    }
}

/// Sparse coefficients, k atoms by n samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub(crate) values: Array2<f64>,
}

impl SparseCode {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite(&values, "SparseCode::new")?;
        Ok(Self { values })
    }

    pub fn zeros(k: usize, n: usize) -> Self {
        Self {
            values: Array2::zeros((k, n)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn atom_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(ndarray::Axis(1), indices),
        }
    }
}

/// Binary labels, one per sample. 1 encodes the positive class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub(crate) values: Vec<u8>,
}

impl Labels {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Config(format!("label value {bad} is not 0 or 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().map(|&v| f64::from(v)))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: indices.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// Linear classifier over code space: score(s) = w's + b.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub w: Array1<f64>,
    pub b: f64,
}

impl ClassifierWeights {
    pub fn new(w: Array1<f64>, b: f64) -> Result<Self> {
        if !b.is_finite() || !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ClassifierWeights::new"));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            w: Array1::zeros(k),
            b: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

/// Training hyperparameters. `lambda1` weighs reconstruction, `lambda2`
/// sparsity, `lambda3` the classifier ridge, `lambda4` atom orthogonality.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub eta: f64,
    pub k: usize,
    pub g: usize,
    pub iters_local: usize,
    pub iters_fed: usize,
    pub iters_pretrain: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.005,
            lambda3: 1.5,
            lambda4: 0.01,
            eta: 1e-4,
            k: 400,
            g: 370,
            iters_local: 5,
            iters_fed: 30,
            iters_pretrain: 200,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Desk-scale profile paired with `SyntheticSpec::quickstart`; runs in
    /// seconds while still recovering the planted model.
    pub fn quickstart() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.15,
            lambda3: 0.1,
            lambda4: 0.5,
            eta: 0.02,
            k: 16,
            g: 10,
            iters_local: 5,
            iters_fed: 40,
            iters_pretrain: 4000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g > self.k {
            return Err(Error::Config(format!(
                "global atom count {} exceeds dictionary size {}",
                self.g, self.k
            )));
        }
        if self.eta <= 0.0 || self.eta.is_nan() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.eta)));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if v < 0.0 || v.is_nan() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Soft-threshold level used by every supervised code update.
    pub fn code_threshold(&self) -> f64 {
        self.eta * self.lambda2
    }
}
