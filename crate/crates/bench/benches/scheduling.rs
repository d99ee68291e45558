use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use melsched_bench::{default_costs, default_params, shard};
use melsched_core::learner::{local_update, TaskKind};
use melsched_core::schedule::{argmin_scan, find_tau_star, l_of_tau, objective};
use std::hint::black_box;

fn tau_search(c: &mut Criterion) {
    let params = default_params(0.1);
    let mut group = c.benchmark_group("tau_search");
    for k in [5, 20, 100] {
        let costs = default_costs(k, 300.0);
        group.bench_with_input(BenchmarkId::new("bisection", k), &costs, |b, costs| {
            b.iter(|| find_tau_star(black_box(costs), &params, 500).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("scan", k), &costs, |b, costs| {
            b.iter(|| argmin_scan(500, |t| objective(black_box(costs), &params, t as f64)).unwrap())
        });
    }
    group.finish();
}

fn total_updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("l_of_tau");
    for k in [20, 1000] {
        let costs = default_costs(k, 300.0);
        group.bench_with_input(BenchmarkId::from_parameter(k), &costs, |b, costs| {
            b.iter(|| l_of_tau(black_box(costs), 43.0))
        });
    }
    group.finish();
}

fn local_step(c: &mut Criterion) {
    let data = shard(2700, 10);
    let w = vec![0.01; 10];
    c.bench_function("local_update/logistic_2700x10", |b| {
        b.iter(|| local_update(TaskKind::Logistic, black_box(&w), &data, 0.01).unwrap())
    });
}

criterion_group!(benches, tau_search, total_updates, local_step);
criterion_main!(benches);
