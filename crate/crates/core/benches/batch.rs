use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use quasirb::eim::eim_build;
use quasirb::fem::BoundaryMode;
use quasirb::geometry::benchmark_cell;
use quasirb::material::{ReluctivityModel, SourceData};
use quasirb::offline::{greedy_build, truth_nonlinearity_fields, GreedyOptions, SnapshotCache};
use quasirb::online::{solve_and_estimate_batch, OnlineOptions};
use quasirb::par::{self, Execution};
use quasirb::truth::{NewtonOptions, TruthProblem};

fn setup() -> (TruthProblem, quasirb::offline::RbModel, Vec<Vec<f64>>) {
    let problem = TruthProblem::new(
        benchmark_cell(),
        3,
        BoundaryMode::AntiPeriodic,
        ReluctivityModel::default_curve(),
        SourceData::magnet(3e5),
    )
    .unwrap();
    let b = problem.geometry.parameter_box.clone();
    let opts = GreedyOptions {
        n_max: 8,
        ..GreedyOptions::default()
    };
    let mut cache = SnapshotCache::new();
    let fields = truth_nonlinearity_fields(&problem, &b.grid(&[3, 3, 3]), &opts, &mut cache).unwrap();
    let eim = eim_build(&fields, 0.0, 20);
    let (model, _) = greedy_build(&problem, &b.grid(&[3, 3, 3]), eim, 200.0, &opts, &mut cache).unwrap();
    (problem, model, b.grid(&[4, 4, 4]))
}

fn batches(c: &mut Criterion) {
    let (problem, model, params) = setup();
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];
    let mut group = c.benchmark_group("online_batch");
    group.sample_size(10);
    for (name, exec) in modes {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |bench, &exec| {
            bench.iter(|| solve_and_estimate_batch(&model, &params, &OnlineOptions::default(), exec))
        });
    }
    group.finish();
    let mut group = c.benchmark_group("truth_batch");
    group.sample_size(10);
    let subset = &params[..16];
    for (name, exec) in modes {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |bench, &exec| {
            bench.iter(|| par::map(exec, subset, |p| problem.newton_solve(p, &NewtonOptions::default(), None)))
        });
    }
    group.finish();
}

criterion_group!(benches, batches);
criterion_main!(benches);
