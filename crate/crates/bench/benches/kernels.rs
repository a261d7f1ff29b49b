use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use trajrisk_bench::{box_pair, path, predictor, samples};
use trajrisk_core::data::butterworth_lowpass;
use trajrisk_core::plan::{spline_fit, SplineEnd};
use trajrisk_core::predictor::Baseline;
use trajrisk_core::risk::sat_overlap;
use trajrisk_core::scenario::{assess, fixtures, AssessConfig, OvModel};
use trajrisk_core::train::{Phase, TrainConfig, Trainer};

fn geometry(c: &mut Criterion) {
    let (a, b) = box_pair();
    c.bench_function("sat_overlap", |bench| bench.iter(|| sat_overlap(black_box(&a), black_box(&b))));

    let pts = path(26);
    c.bench_function("spline_fit_26", |bench| {
        bench.iter(|| spline_fit(0.0, 0.2, black_box(&pts), [25.0, 0.8], [0.6, 0.0], SplineEnd::NotAKnot).unwrap())
    });

    let series: Vec<f64> = (0..10_000).map(|k| (k as f64 * 0.01).sin()).collect();
    c.bench_function("butterworth_10k", |bench| bench.iter(|| butterworth_lowpass(black_box(&series), 1.0, 10.0).unwrap()));
}

fn predictor_kernels(c: &mut Criterion) {
    let model = predictor();
    let data = samples(32);
    let refs: Vec<_> = data.iter().collect();
    let mut g = c.benchmark_group("predictor");
    g.sample_size(10);
    g.bench_function("predict_batch_32", |bench| bench.iter(|| model.predict_batch(black_box(&refs)).unwrap()));
    g.bench_function("train_epoch_32", |bench| {
        let cfg = TrainConfig { batch_size: 32, pretrain_epochs: 0, formal_epochs: 1, ..TrainConfig::default() };
        bench.iter(|| {
            let mut t = Trainer::new(&data, &data[..4], model.clone(), cfg).unwrap();
            let r = t.run_epoch().unwrap().unwrap();
            assert_eq!(r.phase, Phase::Formal);
        })
    });
    g.finish();
}

fn risk(c: &mut Criterion) {
    let scenario = fixtures::cut_in();
    let config = AssessConfig::default();
    let mut g = c.benchmark_group("risk");
    g.sample_size(10);
    g.bench_function("assess_cut_in_cv", |bench| bench.iter(|| assess(black_box(&scenario), OvModel::Baseline(Baseline::Cv), &config).unwrap()));
    g.finish();
}

criterion_group!(benches, geometry, predictor_kernels, risk);
criterion_main!(benches);
