//! Fixture builders shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pfeddl_core::types::{DataMatrix, Dictionary, Labels, SparseCode};

pub struct SiteFixture {
    pub data: DataMatrix,
    pub labels: Labels,
    pub dict: Dictionary,
    pub codes: SparseCode,
}

pub fn site_fixture(d: usize, k: usize, n: usize, seed: u64) -> SiteFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = Dictionary::random_unit(d, k, k / 2, &mut rng).unwrap();
    let mut codes = Array2::zeros((k, n));
    for j in 0..n {
        for _ in 0..3 {
            let atom = rng.random_range(0..k);
            codes[[atom, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let noise = Array2::from_shape_fn((d, n), |_| 0.01 * rng.sample::<f64, _>(StandardNormal));
    let data = DataMatrix::new(dict.values().dot(&codes) + noise).unwrap();
    let labels = Labels::new((0..n).map(|i| (i % 2) as u8).collect()).unwrap();
    SiteFixture {
        data,
        labels,
        dict,
        codes: SparseCode::new(codes).unwrap(),
    }
}

pub fn dictionaries(sites: usize, d: usize, k: usize, seed: u64) -> Vec<Dictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sites)
        .map(|_| Dictionary::random_unit(d, k, 0, &mut rng).unwrap())
        .collect()
}
