use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kamlab::action_kernel::{compute_w_kernel, feynman_kac_mc, McParams};
use kamlab::mather::{build_action_graph, min_mean_cycle};
use kamlab::schroedinger::{assemble_twisted_generator, EigenOptions, EigenPair};
use kamlab::torus::ClosedForm;
use kamlab::transport::network_simplex;
use kamlab::weak_kam::{lax_oleinik_step, solve_weak_kam, Sign, SolverOptions};
use kamlab::GridField;
use kamlab_bench::{cosine, cosine_cost, transport_instance};

fn min_plus(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_plus");
    for n in [256, 1024] {
        let cost = cosine_cost(n, 0.05);
        let u = GridField::zeros(n);
        group.bench_with_input(BenchmarkId::new("lax_oleinik_step", n), &n, |b, _| b.iter(|| lax_oleinik_step(black_box(&u), &cost)));
    }
    let cost = cosine_cost(256, 0.05);
    group.sample_size(10);
    group.bench_function("solve_weak_kam/256", |b| b.iter(|| solve_weak_kam(&cost, &SolverOptions::default()).unwrap()));
    let (g, v) = cosine(128);
    group.bench_function("w_kernel/128x16", |b| b.iter(|| compute_w_kernel(&g, &v, &ClosedForm::zero(), 16, 4.0).unwrap()));
    group.finish();
}

fn karp(c: &mut Criterion) {
    let mut group = c.benchmark_group("karp");
    group.sample_size(10);
    for n in [128, 256] {
        let graph = build_action_graph(&cosine_cost(n, 0.05));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| min_mean_cycle(black_box(&graph)).unwrap()));
    }
    group.finish();
}

fn power_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("perron");
    group.sample_size(10);
    for (n, beta) in [(256, 20.0), (512, 20.0)] {
        let (g, v) = cosine(n);
        let generator = assemble_twisted_generator(&g, &v, &ClosedForm::new([0.5, 0.0]), beta, Sign::Plus).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| EigenPair::compute(black_box(&generator), &EigenOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn simplex(c: &mut Criterion) {
    let mut group = c.benchmark_group("network_simplex");
    for k in [16, 64] {
        let (s, d, cost) = transport_instance(k, k);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| b.iter(|| network_simplex(&s, &d, black_box(&cost), k).unwrap()));
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let (g, v) = cosine(128);
    let params = McParams { y: 0, x: 32, t: 1.0, beta: 20.0, samples: 5000, steps: 64, seed: 1 };
    let mut group = c.benchmark_group("feynman_kac");
    group.sample_size(10);
    group.bench_function("5000x64", |b| b.iter(|| feynman_kac_mc(&g, &v, &ClosedForm::zero(), black_box(&params)).unwrap()));
    group.finish();
}

criterion_group!(benches, min_plus, karp, power_iteration, simplex, monte_carlo);
criterion_main!(benches);
