use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use uniparse::dispatch::RoutePolicy;
use uniparse::engine::parse_document_direct;
use uniparse::runtime::{simulate, Mode, PipelineConfig};
use uniparse::EngineConfig;
use uniparse_bench::documents;

fn direct(c: &mut Criterion) {
    let docs = documents(2, 5, 2);
    let (cfg, policy) = (EngineConfig::new(), RoutePolicy::new(true));
    let mut group = c.benchmark_group("parse_direct");
    group.throughput(Throughput::Elements(docs.iter().map(|d| d.pages.len() as u64).sum()));
    group.bench_function("5_docs", |b| {
        b.iter(|| {
            for d in &docs {
                black_box(parse_document_direct(d, &cfg, &policy));
            }
        })
    });
    group.finish();
}

fn simulated(c: &mut Criterion) {
    let docs = documents(3, 10, 2);
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    for mode in Mode::ALL {
        let cfg = PipelineConfig::new(mode, 4);
        group.bench_with_input(BenchmarkId::from_parameter(mode.as_str()), &cfg, |b, cfg| {
            b.iter(|| black_box(simulate(&docs, cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, direct, simulated);
criterion_main!(benches);
