use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tactile_recovery::harness::{run_batch, sweep_config, Execution, RunOptions, Variant};

fn batch(c: &mut Criterion) {
    let cfg = sweep_config(Variant::Proposed, 4.0);
    let opts = RunOptions { record_log: false };
    let mut group = c.benchmark_group("wall_batch_16");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_batch(&cfg, 16, exec, opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
