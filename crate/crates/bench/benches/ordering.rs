use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use uniparse::config::OrderingConfig;
use uniparse::ordering::reading_order;
use uniparse_bench::layout_trees;

fn ordering(c: &mut Criterion) {
    let cfg = OrderingConfig::default();
    let mut group = c.benchmark_group("reading_order");
    for columns in [1, 2, 3] {
        let trees = layout_trees(1, 10, columns);
        group.throughput(Throughput::Elements(trees.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(columns), &trees, |b, trees| {
            b.iter(|| {
                for t in trees {
                    black_box(reading_order(t, &cfg));
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, ordering);
criterion_main!(benches);
