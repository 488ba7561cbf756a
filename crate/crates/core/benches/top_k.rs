//! Sequential vs rayon-parallel gallery scans.
//!
//! `cargo bench -p cir-core` compares both modes for single queries and
//! query batches. Building with `--no-default-features` turns the parallel
//! path into the sequential one.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use cir_core::embedding::{Embedding, EmbeddingStore};
use cir_core::index::{Accumulation, Execution, Gallery, SearchConfig};

const DIM: usize = 512;

fn gallery(n: usize, rng: &mut StdRng) -> Gallery {
    let mut store = EmbeddingStore::new("bench", DIM);
    store.records = (0..n)
        .map(|i| {
            let v = (0..DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            (format!("img{i:07}"), v)
        })
        .collect();
    Gallery::from_store(&store).unwrap()
}

fn query(rng: &mut StdRng) -> Embedding {
    Embedding::new((0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn single_query(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(7);
    let mut group = c.benchmark_group("top_k/single");
    group.sample_size(20);
    for n in [20_000, 100_000] {
        let g = gallery(n, &mut rng);
        let q = query(&mut rng);
        group.throughput(Throughput::Elements(n as u64));
        for (label, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let config = SearchConfig {
                accumulation: Accumulation::F32,
                execution,
            };
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| g.top_k_with(black_box(&q), 50, config).unwrap())
            });
        }
        group.bench_with_input(BenchmarkId::new("sequential_f64", n), &n, |b, _| {
            let config = SearchConfig {
                accumulation: Accumulation::F64,
                execution: Execution::Sequential,
            };
            b.iter(|| g.top_k_with(black_box(&q), 50, config).unwrap())
        });
    }
    group.finish();
}

fn query_batch(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(11);
    let g = gallery(20_000, &mut rng);
    let queries: Vec<Embedding> = (0..32).map(|_| query(&mut rng)).collect();
    let mut group = c.benchmark_group("top_k/batch32");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            queries
                .iter()
                .map(|q| g.top_k_with(q, 50, SearchConfig::sequential()).unwrap())
                .collect::<Vec<_>>()
        })
    });
    group.bench_function("parallel", |b| {
        b.iter(|| g.top_k_batch(black_box(&queries), 50, Accumulation::F32))
    });
    group.finish();
}

criterion_group!(benches, single_query, query_batch);
criterion_main!(benches);
