//! Rayon pool vs the sequential path on the two batch workloads that dominate
//! runtime: independent chains and bound-suite instances.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use tcp_dipoles::bounds::{BoundInstance, BoundKind};
use tcp_dipoles::estimators::{ChainParams, InitKind};
use tcp_dipoles::par::{map_indexed, map_indexed_seq};
use tcp_dipoles::sampler::{MoveSpec, Schedule};

fn chains(c: &mut Criterion) {
    let params = ChainParams {
        n: 20,
        beta: 3.0,
        lambda: 1e-2,
        schedule: Schedule::new(2_000, 10_000, 1_000).unwrap(),
        init: InitKind::Paired,
        moves: MoveSpec::default(),
        seed: 1,
    };
    let one = |k: usize| params.run_chain(k as u64, &[]).unwrap().records.len();
    let mut g = c.benchmark_group("chains_x4");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(4, one))));
    g.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(4, one))));
    g.finish();
}

fn bound_instances(c: &mut Criterion) {
    let kind = BoundKind::NearestNeighbor;
    let one = |k: usize| BoundInstance::random(kind, 7, k as u64).required_constant(kind).unwrap();
    let mut g = c.benchmark_group("bound_instances_x1000");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(map_indexed(1000, one))));
    g.bench_function("sequential", |b| b.iter(|| black_box(map_indexed_seq(1000, one))));
    g.finish();
}

criterion_group!(benches, chains, bound_instances);
criterion_main!(benches);
