//! Sequential against rayon execution on the Monte-Carlo kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtpc::converse::{converse_experiment_with, ConverseConfig};
use dtpc::id::{measure_errors_with, ColoringFamily, ErrorExperiment, IdCodeSpec, Link};
use dtpc::*;

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn identification(c: &mut Criterion) {
    let ch = PoissonChannel::new(1.0, 5.0).unwrap();
    let pc = PowerConstraint::peak(5.0).unwrap();
    let cap = capacity(&ch, &pc, &SolverConfig::default()).unwrap();
    let spec = IdCodeSpec::random(
        &ch,
        &cap.distribution,
        &pc,
        36,
        ColoringFamily::full(31, 3).unwrap(),
        1,
        (0.05, 0.05),
        1,
    )
    .unwrap();
    let exp = ErrorExperiment {
        trials: 2000,
        senders: 4,
        candidates: 4,
        seed: 1,
    };
    let mut g = c.benchmark_group("measure_errors");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| measure_errors_with(black_box(&spec), Link::Poisson, &exp, exec).unwrap())
        });
    }
    g.finish();
}

fn converse(c: &mut Criterion) {
    let ch = PoissonChannel::new(1.0, 5.0).unwrap();
    let pc = PowerConstraint::peak(5.0).unwrap();
    let cap = capacity(&ch, &pc, &SolverConfig::default()).unwrap();
    let cfg = ConverseConfig {
        samples: 5000,
        ..ConverseConfig::default()
    };
    let mut g = c.benchmark_group("converse");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| converse_experiment_with(&ch, &pc, black_box(&cap), &[100], &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn secrecy(c: &mut Criterion) {
    let wp = WiretapPair::from_dark_currents(1.0, 10.0, 5.0).unwrap();
    let pc = PowerConstraint::peak(5.0).unwrap();
    let cfg = SolverConfig {
        grid_points: 500,
        verify_points: 2000,
        ..SolverConfig::default()
    };
    let mut g = c.benchmark_group("secrecy_restarts");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| secrecy_capacity_of(&wp.main, &wp.eve, &pc, black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, identification, converse, secrecy);
criterion_main!(benches);
