use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pfeddl_bench::{dictionaries, site_fixture};
use pfeddl_core::alignment::global_alignment;
use pfeddl_core::dl::{
    soft_threshold_matrix, update_codes_supervised, update_dictionary_scaled,
};
use pfeddl_core::evaluation::encode_test_samples;
use pfeddl_core::types::{ClassifierWeights, Hyperparams, SparseCode};

fn bench_soft_threshold(c: &mut Criterion) {
    let fixture = site_fixture(400, 64, 256, 1);
    let values = fixture.data.values();
    c.bench_function("soft_threshold_400x256", |b| {
        b.iter(|| soft_threshold_matrix(black_box(values), 0.05))
    });
}

fn bench_code_step(c: &mut Criterion) {
    let fixture = site_fixture(200, 64, 256, 2);
    let weights = ClassifierWeights::zeros(64);
    let hyper = Hyperparams {
        k: 64,
        g: 32,
        eta: 0.005,
        ..Hyperparams::default()
    };
    c.bench_function("supervised_code_step_200x64x256", |b| {
        b.iter(|| {
            update_codes_supervised(
                black_box(&fixture.codes),
                &fixture.dict,
                &fixture.data,
                &fixture.labels,
                &weights,
                &hyper,
            )
            .unwrap()
        })
    });
}

fn bench_dictionary_step(c: &mut Criterion) {
    let fixture = site_fixture(200, 64, 256, 3);
    c.bench_function("dictionary_step_200x64x256", |b| {
        b.iter(|| {
            update_dictionary_scaled(
                black_box(&fixture.dict),
                &fixture.codes,
                &fixture.data,
                0.005,
                1.0,
                0.05,
            )
            .unwrap()
        })
    });
}

fn bench_alignment(c: &mut Criterion) {
    let dicts = dictionaries(4, 128, 32, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let codes: Vec<SparseCode> = dicts
        .iter()
        .map(|d| {
            SparseCode::new(ndarray::Array2::from_shape_fn(
                (d.atom_count(), 16),
                |_| rand::Rng::random::<f64>(&mut rng) - 0.5,
            ))
            .unwrap()
        })
        .collect();
    c.bench_function("global_alignment_4x32x128", |b| {
        b.iter(|| global_alignment(black_box(&dicts), &codes).unwrap())
    });
}

fn bench_encode(c: &mut Criterion) {
    let fixture = site_fixture(64, 16, 64, 6);
    let hyper = Hyperparams::quickstart();
    c.bench_function("encode_test_samples_64x16x64", |b| {
        b.iter(|| encode_test_samples(black_box(&fixture.dict), &fixture.data, &hyper).unwrap())
    });
}

criterion_group!(
    benches,
    bench_soft_threshold,
    bench_code_step,
    bench_dictionary_step,
    bench_alignment,
    bench_encode
);
criterion_main!(benches);
