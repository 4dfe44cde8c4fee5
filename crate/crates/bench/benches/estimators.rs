use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pspo_core::optimizers::{pspo_minimize, spsa2_minimize, PspoConfig, SpsaConfig, StopCriteria};
use pspo_core::perturbation::build_perturbations;
use pspo_core::problems::{
    sir_neg_log_pseudolikelihood, synthetic_outbreak, NoisyQuadratic, SirParams,
};
use pspo_core::{psp_gradient, Evaluator, ParamVector};

fn perturbations(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_perturbations");
    for &(p, m) in &[(5usize, 50usize), (25, 250), (5, 4500)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("p{p}_m{m}")),
            &(p, m),
            |b, &(p, m)| b.iter(|| build_perturbations(black_box(p), black_box(m), 7).unwrap()),
        );
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let q = NoisyQuadratic::new(5, 3.0);
    let ev = Evaluator::new(&q);
    let theta = ParamVector::zeros(5);
    let mut group = c.benchmark_group("psp_gradient");
    for m in [5usize, 50, 500] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| psp_gradient(&ev, &theta, 0.1, m, black_box(3)).unwrap())
        });
    }
    group.finish();
}

fn optimizers(c: &mut Criterion) {
    let q = NoisyQuadratic::new(5, 3.0);
    let stop = StopCriteria {
        max_iters: 100,
        ..StopCriteria::default()
    };
    let pspo = PspoConfig {
        c: 1.0,
        c_tilde: 0.5,
        stop,
        ..PspoConfig::default()
    };
    let spsa = SpsaConfig {
        stop,
        ..SpsaConfig::default()
    };
    let theta0 = ParamVector::zeros(5);
    c.bench_function("pspo_quadratic_100_iters", |b| {
        b.iter(|| pspo_minimize(&q, &theta0, &pspo).unwrap())
    });
    c.bench_function("spsa2_quadratic_100_iters", |b| {
        b.iter(|| spsa2_minimize(&q, &theta0, &spsa).unwrap())
    });
}

fn sir(c: &mut Criterion) {
    let truth = SirParams::new(0.6, 0.2).unwrap();
    let data = synthetic_outbreak(truth, 188, 1, 120, 0.2, 1).unwrap();
    c.bench_function("sir_pseudolikelihood_r4", |b| {
        b.iter(|| sir_neg_log_pseudolikelihood(truth, &data, 4, black_box(5)).unwrap())
    });
}

criterion_group!(benches, perturbations, gradient, optimizers, sir);
criterion_main!(benches);
