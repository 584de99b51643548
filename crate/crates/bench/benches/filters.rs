use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use scoredrive::conjugate::{default_init, run_conjugate_filter};
use scoredrive::recursion::{fit_params, run_recursion, FitBounds};
use scoredrive::simulate::simulate;
use scoredrive::{Dgp, EdmSpec, Family, Link, RecursionParams, SimConfig};

fn counts(n: usize) -> Vec<f64> {
    let cfg = SimConfig::new(
        Dgp::NefConstant {
            family: Family::Poisson,
            mu: 3.0,
            dispersion: 1.0,
        },
        n,
        1,
    );
    simulate(&cfg).unwrap().y
}

fn returns(n: usize) -> Vec<f64> {
    let cfg = SimConfig::new(
        Dgp::Garch11 {
            omega: 0.1,
            alpha: 0.05,
            beta: 0.9,
        },
        n,
        1,
    );
    simulate(&cfg).unwrap().y
}

fn filters(c: &mut Criterion) {
    let ys = counts(10_000);
    let spec = EdmSpec::poisson();
    let init = default_init(&spec, &ys, 0.9, None).unwrap();
    c.bench_function("conjugate_poisson_10k", |b| {
        b.iter(|| run_conjugate_filter(&spec, black_box(&ys), 0.9, init).unwrap())
    });

    let rs = returns(10_000);
    let gv = EdmSpec::gaussian_variance();
    let params = RecursionParams::new(0.1, 0.95, 0.05);
    c.bench_function("variance_recursion_10k", |b| {
        b.iter(|| run_recursion(&gv, &params, black_box(&rs)).unwrap())
    });

    let short = returns(1_000);
    let bounds = FitBounds::default_for(&gv, Link::Identity, &short);
    let start = RecursionParams::new(0.2, 0.9, 0.1);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("variance_fit_1k", |b| {
        b.iter(|| fit_params(&gv, black_box(&short), Link::Identity, 1.0, &start, &bounds).unwrap())
    });
    group.finish();
}

criterion_group!(benches, filters);
criterion_main!(benches);
