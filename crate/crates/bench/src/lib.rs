//! Criterion benchmarks for the hot paths: filtering, its gradient, the
//! CNN passes, JPEG round trips and a short attack.

use std::hint::black_box;

use advcf_core::attacks::{advcf_attack, AdvCfConfig};
use advcf_core::defenses::{jpeg_roundtrip, median_filter3};
use advcf_core::filter::{apply_filter, filter_param_gradient, FilterParams};
use advcf_core::image::{Image, Split};
use advcf_core::losses::LogitLoss;
use advcf_core::model::{input_gradient, Classifier, TinyCnn, TinyCnnShape};
use advcf_core::synthetic::synthetic_dataset;
use criterion::{BenchmarkId, Criterion};

fn sample_image() -> Image {
    synthetic_dataset(1, 32, 7, Split::Test).unwrap().items()[0].image.clone()
}

pub fn filter(c: &mut Criterion) {
    let image = sample_image();
    let mut group = c.benchmark_group("filter");
    for k in [8, 64, 256] {
        let params = FilterParams::identity(k, 16.0).unwrap();
        let upstream = vec![0.01; image.data().len()];
        group.bench_with_input(BenchmarkId::new("apply", k), &params, |b, p| {
            b.iter(|| apply_filter(black_box(&image), p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("param_gradient", k), &params, |b, p| {
            b.iter(|| filter_param_gradient(black_box(&image), p, &upstream).unwrap())
        });
    }
    group.finish();
}

pub fn model(c: &mut Criterion) {
    let image = sample_image();
    let net = TinyCnn::new(TinyCnnShape::default(), 1).unwrap();
    let mut group = c.benchmark_group("tiny_cnn");
    group.bench_function("logits", |b| b.iter(|| net.logits(black_box(&image)).unwrap()));
    group.bench_function("input_gradient", |b| {
        b.iter(|| input_gradient(&net, black_box(&image), LogitLoss::Cw { kappa: 0.0 }, 3).unwrap())
    });
    group.finish();
}

pub fn defenses(c: &mut Criterion) {
    let image = sample_image();
    let mut group = c.benchmark_group("defenses");
    group.bench_function("jpeg_q30", |b| b.iter(|| jpeg_roundtrip(black_box(&image), 30).unwrap()));
    group.bench_function("median3", |b| b.iter(|| median_filter3(black_box(&image))));
    group.finish();
}

pub fn attack(c: &mut Criterion) {
    let image = sample_image();
    let net = TinyCnn::new(TinyCnnShape::default(), 1).unwrap();
    let label = net.predict(&image).unwrap();
    let config = AdvCfConfig {
        iterations: 10,
        step_size: 1e-3,
        ..AdvCfConfig::comparison()
    };
    let mut group = c.benchmark_group("attack");
    group.sample_size(20);
    group.bench_function("advcf_10_steps", |b| {
        b.iter(|| advcf_attack(&net, black_box(&image), label, &config).unwrap())
    });
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    filter(c);
    model(c);
    defenses(c);
    attack(c);
}
