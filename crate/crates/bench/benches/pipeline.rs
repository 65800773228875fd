use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spinewalker::labeling::best_ordering;
use spinewalker::segbackend::OracleSegmenter;
use spinewalker::traversal::traverse;
use spinewalker::volgrid::{connected_components, extract_patch, resample, Connectivity, Interp};
use spinewalker::TraversalConfig;
use spinewalker_bench::{full_phantom, likelihoods, small_phantom};

fn bench_extract_patch(c: &mut Criterion) {
    let (vol, _) = full_phantom(1);
    let mut g = c.benchmark_group("extract_patch");
    for size in [64usize, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, &size| {
            // centred near the cranial edge so the fill path is exercised too
            b.iter(|| extract_patch(&vol, black_box([80.0, 64.0, 40.0]), [size; 3], -1000i16).unwrap())
        });
    }
    g.finish();
}

fn bench_resample(c: &mut Criterion) {
    let (vol, _) = small_phantom(2);
    let mut g = c.benchmark_group("resample");
    g.sample_size(10);
    for (name, interp) in [("trilinear", Interp::Trilinear), ("nearest", Interp::Nearest)] {
        g.bench_function(name, |b| b.iter(|| resample(&vol, black_box([1.5, 1.5, 2.0]), interp).unwrap()));
    }
    g.finish();
}

fn bench_connected_components(c: &mut Criterion) {
    let (_, truth) = small_phantom(3);
    let mask = truth.labels.map(|v| u8::from(v != 0));
    let mut g = c.benchmark_group("connected_components");
    g.sample_size(10);
    for (name, conn) in [("6", Connectivity::Faces), ("26", Connectivity::Full)] {
        g.bench_function(name, |b| b.iter(|| connected_components(black_box(&mask), conn).unwrap()));
    }
    g.finish();
}

fn bench_traversal(c: &mut Criterion) {
    let (vol, truth) = small_phantom(4);
    let cfg = TraversalConfig::default();
    let mut g = c.benchmark_group("traversal");
    g.sample_size(10);
    g.bench_function("oracle_8_vertebrae", |b| {
        b.iter(|| {
            let mut oracle = OracleSegmenter::new(&truth, 0.0, 0);
            traverse(black_box(&vol), &mut oracle, &cfg).unwrap()
        })
    });
    g.finish();
}

fn bench_best_ordering(c: &mut Criterion) {
    let mut g = c.benchmark_group("best_ordering");
    for n in [5usize, 12, 24] {
        let likes = likelihoods(n, 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &likes, |b, likes| {
            b.iter(|| best_ordering(black_box(likes)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_extract_patch,
    bench_resample,
    bench_connected_components,
    bench_traversal,
    bench_best_ordering
);
criterion_main!(benches);
