use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use cggd::experiment::{prepare, synthetic_dataset, RawSplits};
use cggd::scalar_lab::{
    classify_attractors, default_cggd_schedule, linspace, polynomial_problem, ScalarMethod,
    ScalarSettings, WORKING_INTERVAL,
};
use cggd::{init_mlp, train, weight_direction, Method, TrainConfig};

fn splits() -> RawSplits {
    let (data, _) = synthetic_dataset(450, 0).unwrap();
    let rows = |r: std::ops::Range<usize>| data.select(&r.collect::<Vec<_>>());
    RawSplits {
        train: rows(0..200),
        val: rows(200..325),
        test: rows(325..450),
    }
}

fn epochs(c: &mut Criterion) {
    let prepared = prepare(&splits()).unwrap();
    let (_, cs) = synthetic_dataset(10, 0).unwrap();
    let model = init_mlp(&[4, 32, 32, 2], 0).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.optimizer.max_epochs = 10;

    let mut group = c.benchmark_group("ten_epochs");
    for method in Method::ALL {
        group.bench_function(method.name(), |b| {
            b.iter(|| train(model.clone(), &prepared.data, &cs, method, &cfg, 0).unwrap())
        });
    }
    group.finish();
}

fn direction(c: &mut Criterion) {
    let prepared = prepare(&splits()).unwrap();
    let (_, cs) = synthetic_dataset(10, 0).unwrap();
    let model = init_mlp(&[4, 32, 32, 2], 1).unwrap();
    c.bench_function("weight_direction_200_rows", |b| {
        b.iter(|| weight_direction(&cs, &model, black_box(&prepared.data.train.inputs)).unwrap())
    });
}

fn attractors(c: &mut Criterion) {
    let p = polynomial_problem();
    let settings = ScalarSettings::default();
    let schedule = default_cggd_schedule(&p, &settings);
    let starts = linspace(WORKING_INTERVAL.0, WORKING_INTERVAL.1, 64);
    let mut group = c.benchmark_group("scalar");
    group.sample_size(10);
    group.bench_function("cggd_attractor_grid_64", |b| {
        b.iter(|| classify_attractors(ScalarMethod::Cggd, &p, &starts, &schedule, &settings).unwrap())
    });
    group.finish();
}

criterion_group!(benches, epochs, direction, attractors);
criterion_main!(benches);
