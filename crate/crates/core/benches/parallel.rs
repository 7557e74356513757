//! Data-parallel hot paths on one thread versus the default rayon pool.
//!
//! Build with `--no-default-features` to time the plain-iterator fallback;
//! the group name records which build produced the numbers.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use occrel::metrics::{evaluate, EvalOptions, UncertaintySource};
use occrel::toynet::{generate_scenes, predict_dump, Mode, SceneConfig, ToyNet};

#[cfg(feature = "parallel")]
const BUILD: &str = "rayon";
#[cfg(not(feature = "parallel"))]
const BUILD: &str = "sequential";

fn pools() -> Vec<(String, Option<usize>)> {
    let mut out = vec![("default".to_string(), None)];
    if cfg!(feature = "parallel") {
        out.push(("1-thread".to_string(), Some(1)));
    }
    out
}

#[cfg(feature = "parallel")]
fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn in_pool<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    let ds = generate_scenes(&SceneConfig::default(), 0).expect("scenes");
    let net = ToyNet::new(ds.config.feature_dim, ds.test.num_classes, 0);
    let dump = predict_dump(&net, &ds.test, Mode::Baseline, 0).expect("dump");
    let opts = EvalOptions::default();

    let mut group = c.benchmark_group(format!("{BUILD}-build"));
    group.sample_size(10);
    for (label, threads) in pools() {
        group.bench_function(BenchmarkId::new("predict_dump", &label), |b| {
            b.iter(|| in_pool(threads, || predict_dump(&net, black_box(&ds.test), Mode::Baseline, 0).unwrap()))
        });
        group.bench_function(BenchmarkId::new("evaluate", &label), |b| {
            b.iter(|| in_pool(threads, || evaluate(black_box(&dump), UncertaintySource::OneMinusConfidence, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
