//! Sequential vs rayon backends on the two data-parallel workloads: the seed
//! sweep of short training runs and batched classifier evaluation.

use std::hint::black_box;

use cammarl::conformal::{ClassifierConfig, ConformalModel, DEFAULT_LAMBDA_GRID};
use cammarl::env::EnvSpec;
use cammarl::nn::{batch_from_rows, softmax};
use cammarl::par::{map_par, map_seq};
use cammarl::rng;
use cammarl::train::{train, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

fn seed_sweep(c: &mut Criterion) {
    let mut cfg = TrainConfig::new(EnvSpec::by_name("cn").unwrap(), "cammarl-binary".parse().unwrap(), 40);
    cfg.update_interval = 250;
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", seeds.len()), |b| {
        b.iter(|| map_seq(&seeds, |&s| train(black_box(&cfg), s).unwrap().returns.len()))
    });
    group.bench_function(BenchmarkId::new("rayon", seeds.len()), |b| {
        b.iter(|| map_par(&seeds, |&s| train(black_box(&cfg), s).unwrap().returns.len()))
    });
    group.finish();
}

fn classifier_eval(c: &mut Criterion) {
    let mut r = rng::seeded(1);
    let model = ConformalModel::new(12, 5, 0.1, DEFAULT_LAMBDA_GRID.to_vec(), ClassifierConfig::default(), &mut r).unwrap();
    let rows: Vec<Vec<f64>> = (0..16_384).map(|_| (0..12).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let chunks: Vec<&[Vec<f64>]> = rows.chunks(1024).collect();
    let eval = |chunk: &&[Vec<f64>]| {
        let x = batch_from_rows(chunk.iter().map(Vec::as_slice), 12);
        let logits = model.classifier.predict(&x).unwrap();
        logits.rows().into_iter().map(|row| softmax(row.as_slice().unwrap())[0]).sum::<f64>()
    };
    let mut group = c.benchmark_group("classifier_eval");
    group.bench_function(BenchmarkId::new("sequential", rows.len()), |b| b.iter(|| map_seq(&chunks, eval)));
    group.bench_function(BenchmarkId::new("rayon", rows.len()), |b| b.iter(|| map_par(&chunks, eval)));
    group.finish();
}

criterion_group!(benches, seed_sweep, classifier_eval);
criterion_main!(benches);
