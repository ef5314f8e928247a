use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use hybridsim::flow::flow_map;
use hybridsim::hybrid::{simulate, spider, DEFAULT_NODE_BUDGET};
use hybridsim::measure::pushforward;
use hybridsim::HybridState;
use hybridsim_bench::{banded_chain, linear_measure, linear_system, reactor_system};

fn flows(c: &mut Criterion) {
    let spec = reactor_system();
    c.bench_function("rk4 reactor one period", |b| {
        b.iter(|| flow_map(spec.fields(), black_box(&[3.5, 0.75]), 1, 1.0, spec.integrator()).unwrap())
    });
    let linear = linear_system();
    let y0 = HybridState::new(vec![2.0], 0);
    c.bench_function("simulate linear 1000 periods", |b| {
        b.iter(|| simulate(&linear, &y0, 1000.0, 0.5, black_box(7)).unwrap())
    });
}

fn trees(c: &mut Criterion) {
    let spec = reactor_system();
    let y0 = HybridState::new(vec![3.5, 0.75], 1);
    c.bench_function("spider reactor depth 6", |b| {
        b.iter(|| spider(&spec, black_box(&y0), 0.0, 6, DEFAULT_NODE_BUDGET).unwrap())
    });
}

fn measures(c: &mut Criterion) {
    let spec = linear_system();
    let mu = linear_measure(16, 100_000);
    c.bench_function("pushforward linear 3200 bins one period", |b| {
        b.iter(|| pushforward(&spec, black_box(&mu), 1.0).unwrap())
    });
}

fn chains(c: &mut Criterion) {
    let q = banded_chain(50);
    c.bench_function("stationary 50 states", |b| b.iter(|| black_box(&q).stationary_distribution().unwrap()));
}

criterion_group!(benches, flows, trees, measures, chains);
criterion_main!(benches);
