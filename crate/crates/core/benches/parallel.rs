use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jsq_game::game::equilibrium_strategy;
use jsq_game::meanfield::{certify_stability_with, CertifyOptions};
use jsq_game::sim::{convergence_study, StudyOptions};
use jsq_game::sweep::{run_sweep_with, SweepRange, SweepSpec};
use jsq_game::{Execution, ModelParams, Strategy};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sweep(c: &mut Criterion) {
    let mut spec = SweepSpec::service_rate_preset();
    spec.range = SweepRange::new(0.71, 3.0, 1e-4).unwrap();
    let mut g = c.benchmark_group("sweep_mu_22900_points");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_sweep_with(black_box(&spec), exec).unwrap()));
    }
    g.finish();
}

fn certify(c: &mut Criterion) {
    let p = ModelParams::new(0.5, 0.2, 0.9, 3.0, 1.1).unwrap();
    let qe = equilibrium_strategy(&p).unwrap().strategy();
    let mut g = c.benchmark_group("certify_8_trajectories");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = CertifyOptions { execution, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| certify_stability_with(&p, qe, 8, 200.0, 1, &opts).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let p = ModelParams::new(0.5, 0.2, 1.3, 3.0, 1.1).unwrap();
    let mut g = c.benchmark_group("convergence_study_4_runs");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = StudyOptions { execution, ..StudyOptions::new(2e3) };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| convergence_study(&p, Strategy::JOIN, &[10, 20, 40, 80], 1, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, certify, simulation);
criterion_main!(benches);
