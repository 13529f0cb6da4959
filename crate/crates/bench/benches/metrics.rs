use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softscale::metrics::{bootstrap_ci, prediction_diversity, wasserstein};
use softscale::scaling::model_averaging;
use softscale::{LabelSpace, SoftLabel};

fn labels(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<SoftLabel> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            SoftLabel::new(raw.iter().map(|w| w / sum).collect()).unwrap()
        })
        .collect()
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let par = LabelSpace::likert(-5, 5);
    let pair = labels(&mut rng, 11, 2);
    c.bench_function("wasserstein/11", |b| {
        b.iter(|| wasserstein(black_box(&pair[0]), black_box(&pair[1]), &par))
    });

    let mut group = c.benchmark_group("diversity");
    for n in [10, 32, 100] {
        let set = labels(&mut rng, 11, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &set, |b, set| {
            b.iter(|| prediction_diversity(black_box(set), &par))
        });
    }
    group.finish();

    let set = labels(&mut rng, 11, 10);
    c.bench_function("model_averaging/10", |b| {
        b.iter(|| model_averaging(black_box(&set)))
    });

    let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    c.bench_function("bootstrap_ci/500x1000", |b| {
        b.iter(|| bootstrap_ci(black_box(&xs), 0.95, 1000, 7))
    });
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);
