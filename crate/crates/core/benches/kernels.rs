//! Hot kernels under a single-thread pool and the default pool. Build with
//! `--no-default-features` to measure the sequential fallback instead.

#![allow(clippy::single_range_in_vec_init)]

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kcagc::data::{citation_like, vertical_split, CitationConfig, SplitStrategy};
use kcagc::federation::{run_optimized, AggregationMode, FederationConfig};
use kcagc::graph::{apply_filter, build_laplacian, FilterFamily, FilterSpec};
use kcagc::kmeans::{init_ten_approx, squared_distances};
use kcagc::linalg::project_top_k;
use kcagc::metrics::knn_entropy_bits;
use kcagc::FeatureMatrix;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut sizes = vec![1];
    if default > 1 {
        sizes.push(default);
    }
    sizes
        .into_iter()
        .map(|t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            (format!("{t}-thread"), pool)
        })
        .collect()
}

fn kernels(c: &mut Criterion) {
    let d = citation_like(&CitationConfig { n: 1500, ..CitationConfig::cora_shaped(1) }).unwrap();
    let lap = build_laplacian(&d.graph);
    let spec = FilterSpec::new(FilterFamily::Half, 9);
    let x = apply_filter(&d.features, &lap, &spec).unwrap();
    let centers = init_ten_approx(&x, 7, 0).unwrap();
    let samples = FeatureMatrix::new(3000, 4, (0..12_000).map(|i| ((i * 7919) % 1000) as f64 / 997.0).collect()).unwrap();
    let split = vertical_split(&x, 2, 0, SplitStrategy::Contiguous).unwrap();
    let cfg = FederationConfig::new(7, 7, 0).with_mode(AggregationMode::Plaintext);
    println!("parallel feature enabled: {}", kcagc::parallel::is_parallel());

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("filter_psi9", &name), |b| {
            b.iter(|| pool.install(|| apply_filter(&d.features, &lap, &spec).unwrap()))
        });
        group.bench_function(BenchmarkId::new("distances_k7", &name), |b| {
            b.iter(|| pool.install(|| squared_distances(&x, &centers, &[0..x.cols()])))
        });
        group.bench_function(BenchmarkId::new("project_top7", &name), |b| {
            b.iter(|| pool.install(|| project_top_k(&x, 7).unwrap()))
        });
        group.bench_function(BenchmarkId::new("knn_entropy", &name), |b| {
            b.iter(|| pool.install(|| knn_entropy_bits(&samples, 3).unwrap()))
        });
        group.bench_function(BenchmarkId::new("optimized_l2", &name), |b| {
            b.iter(|| pool.install(|| run_optimized(&split.slices, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
