use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stiffsde::{
    catalog, run_path, solve_implicit, theta_em_step, BrownianGrid, Monitors, PathState, SchemeConfig, SolverConfig,
    SolverMethod, TimePartition,
};

fn solvers(c: &mut Criterion) {
    let entry = catalog::build("cubic", &[]).unwrap();
    let field = entry.model().drift_field();
    let mut group = c.benchmark_group("solve_implicit");
    for method in [
        SolverMethod::Newton,
        SolverMethod::ScalarHybrid,
        SolverMethod::ClosedFormCubic,
        SolverMethod::FixedPoint,
    ] {
        let cfg = SolverConfig::with_method(method);
        // Fixed-point iteration needs a contraction, so keep h small for it.
        let dt = if method == SolverMethod::FixedPoint { 0.01 } else { 0.25 };
        group.bench_function(BenchmarkId::from_parameter(method), |b| {
            b.iter(|| solve_implicit(field, 1.0, dt, black_box(&[3.7]), &cfg, &[3.7]).unwrap())
        });
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("theta_em_step");
    for label in ["cubic", "lotka2"] {
        let entry = catalog::build(label, &[]).unwrap();
        let model = entry.model();
        let n = model.state_dim();
        let state = PathState::new(model, &vec![1.0; n], false).unwrap();
        let dw = vec![0.01; model.noise_dim()];
        let cfg = SchemeConfig::theta_em(1.0, 0.01);
        group.bench_function(label, |b| {
            b.iter(|| theta_em_step(black_box(&state), &dw, model, &cfg).unwrap())
        });
    }
    group.finish();
}

fn paths(c: &mut Criterion) {
    let entry = catalog::build("cubic", &[]).unwrap();
    let partition = TimePartition::dyadic(1.0, 10).unwrap();
    let grid = BrownianGrid::generate_path(partition, 1, 42, 0).unwrap();
    let mut group = c.benchmark_group("run_path_1024_steps");
    for (name, cfg) in [
        ("explicit_em", SchemeConfig::explicit_em(partition.dt())),
        ("theta_em", SchemeConfig::theta_em(1.0, partition.dt())),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| run_path(entry.model(), &cfg, black_box(&grid), &[1.0], &Monitors::none()).unwrap())
        });
    }
    group.bench_function("brownian_grid", |b| {
        b.iter(|| BrownianGrid::generate_path(partition, 1, 42, black_box(3)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, solvers, steps, paths);
criterion_main!(benches);
