//! Region sweeps on the default 21 x 11 grid, run cell by cell on one thread
//! and spread over the rayon pool. Without the `parallel` feature both
//! variants take the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use humanoid_balance::dynamics::ModelKind;
use humanoid_balance::sweep::{run_grid, Execution, GridSpec, SweepContext};

fn sweep(c: &mut Criterion) {
    let ctx = SweepContext::with_defaults();
    let grid = GridSpec::default();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for model in [ModelKind::Lipm, ModelKind::Mmipm, ModelKind::Elippfm] {
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, model), &exec, |b, &exec| {
                b.iter(|| run_grid(black_box(model), &grid, &ctx, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
