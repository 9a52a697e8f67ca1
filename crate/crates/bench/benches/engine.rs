//! Hot-path benchmarks: single-point scoring in both modes across
//! retrieval sizes (demonstrating the constant-time center path), batch
//! embedding, a short training run, and the AUC computation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metricad_core::{
    build_scorer, roc_auc, synth_two_gaussians, train, Matrix, MetricNet, ScoringMode, TrainConfig,
};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.random_range(-2.0..2.0);
    }
    m
}

fn bench_scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = MetricNet::glorot(&[32, 64], 1).unwrap();
    let point: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();

    let mut group = c.benchmark_group("score_one_point");
    for &retrieval_rows in &[100usize, 10_000] {
        let m = random_matrix(&mut rng, retrieval_rows, 32);
        let scorer = build_scorer(net.clone(), &m, ScoringMode::Dissimilarity).unwrap();
        group.bench_with_input(
            BenchmarkId::new("center", retrieval_rows),
            &scorer,
            |b, s| b.iter(|| s.score_center(black_box(&point)).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("dissimilarity", retrieval_rows),
            &scorer,
            |b, s| b.iter(|| s.score_dissimilarity(black_box(&point)).unwrap()),
        );
    }
    group.finish();
}

fn bench_forward_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = MetricNet::glorot(&[32, 64], 2).unwrap();
    let batch = random_matrix(&mut rng, 256, 32);
    c.bench_function("forward_batch_256x32_to_64", |b| {
        b.iter(|| net.forward_batch(black_box(&batch)).unwrap())
    });
}

fn bench_training(c: &mut Criterion) {
    let ds = synth_two_gaussians(200, 10, 10, 8.0, 3).unwrap();
    let config = TrainConfig {
        metric_dim: 32,
        epochs: 3,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    c.bench_function("train_3_epochs_210x10", |b| {
        b.iter(|| train(black_box(&ds.x), black_box(&config)).unwrap())
    });
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut labels: Vec<u8> = (0..10_000).map(|_| u8::from(rng.random_bool(0.1))).collect();
    labels[0] = 0;
    labels[1] = 1;
    c.bench_function("roc_auc_10k", |b| {
        b.iter(|| roc_auc(black_box(&scores), black_box(&labels)).unwrap())
    });
}

criterion_group!(benches, bench_scoring, bench_forward_batch, bench_training, bench_auc);
criterion_main!(benches);
