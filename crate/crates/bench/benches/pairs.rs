use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rotwin_bench::{copula, frailty, Fixture};
use rotwin_core::inference::{bootstrap_ci, covariance_matrix, estimate_theta, BootstrapStratum};
use rotwin_core::{count_wins_losses_with, win_statistics, CountOptions};
use std::hint::black_box;

const STREAM: CountOptions = CountOptions { table_limit: 0 };

fn counting(c: &mut Criterion) {
    let mut g = c.benchmark_group("count_wins_losses");
    for n in [200, 600] {
        for (name, design) in [("copula", copula(n)), ("frailty", frailty(n))] {
            let f = Fixture::from_design(&design, 7);
            g.throughput(Throughput::Elements((n * n * f.rotations.len()) as u64));
            g.bench_with_input(BenchmarkId::new(name, 2 * n), &f, |b, f| {
                b.iter(|| count_wins_losses_with(&f.treated, &f.controls, &f.rotations, &f.specs, STREAM).unwrap())
            });
        }
    }
    g.finish();
}

fn covariance(c: &mut Criterion) {
    let f = Fixture::from_design(&copula(600), 7);
    let out = count_wins_losses_with(&f.treated, &f.controls, &f.rotations, &f.specs, STREAM).unwrap();
    let theta = estimate_theta(&out.counts);
    c.bench_function("covariance_matrix/1200", |b| {
        b.iter(|| covariance_matrix(black_box(&out.summary), black_box(&theta)).unwrap())
    });
    c.bench_function("win_statistics/1200", |b| {
        b.iter(|| win_statistics(black_box(&out.counts), black_box(&out.summary), 0.05).unwrap())
    });
}

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate");
    for (name, design) in [("copula", copula(600)), ("frailty", frailty(600))] {
        g.bench_function(BenchmarkId::new(name, 1200), |b| {
            let mut r = 0;
            b.iter(|| {
                r += 1;
                design.generate(3, r).unwrap()
            })
        });
    }
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let f = Fixture::from_design(&copula(300), 9);
    let strata = [BootstrapStratum {
        label: "all".into(),
        weight: 1.0,
        treated: &f.treated,
        controls: &f.controls,
    }];
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("B200/600", |b| {
        b.iter(|| bootstrap_ci(&strata, &f.rotations, &f.specs, 200, 1, 0.05).unwrap())
    });
    g.finish();
}

criterion_group!(benches, counting, covariance, generation, bootstrap);
criterion_main!(benches);
