//! Prefill, selection pass and matmul under the global thread pool and a
//! single-thread pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gemfilter::cost::{Meter, Phase};
use gemfilter::harness::make_random_model;
use gemfilter::model::{prefill, ModelConfig, PrefillOptions, TokenSeq};
use gemfilter::selection::{select_indices, SelectionParams};
use gemfilter::tensor::{matmul, Matrix};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let global = rayon::current_num_threads();
    let mut out = vec![(
        format!("threads={global}"),
        rayon::ThreadPoolBuilder::new().num_threads(global).build().unwrap(),
    )];
    if global > 1 {
        out.push(("threads=1".into(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()));
    }
    out
}

fn bench_matmul(c: &mut Criterion) {
    let a = Matrix::new(256, 256, (0..256 * 256).map(|i| (i % 17) as f32 * 0.1).collect()).unwrap();
    let b = a.transpose();
    let mut group = c.benchmark_group("matmul_256");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |bench| {
            bench.iter(|| pool.install(|| matmul(&a, &b, &mut 0).unwrap()))
        });
    }
    group.finish();
}

fn bench_prompt(c: &mut Criterion) {
    let cfg = ModelConfig::new(8, 4, 2, 16);
    let w = make_random_model(&cfg, 0).unwrap();
    let prompt = TokenSeq::new((0..512).map(|i| (i * 31 % 256) as u32).collect());
    let mut group = c.benchmark_group("prompt_n512_m8");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("full_prefill", &name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    let mut meter = Meter::new(Phase::Prompt, &cfg);
                    prefill(&prompt, &w, PrefillOptions::default(), &mut meter).unwrap()
                })
            })
        });
        group.bench_function(BenchmarkId::new("selection_r3", &name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    let mut meter = Meter::new(Phase::Prompt, &cfg);
                    select_indices(&w, &prompt, &SelectionParams::new(3, 64), &mut meter).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_prompt);
criterion_main!(benches);
