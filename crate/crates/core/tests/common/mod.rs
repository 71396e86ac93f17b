#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quasirb::eim::eim_build;
use quasirb::fem::BoundaryMode;
use quasirb::geometry::benchmark_cell;
use quasirb::material::{ReluctivityModel, SourceData};
use quasirb::offline::{greedy_build, truth_nonlinearity_fields, GreedyOptions, RbModel, SnapshotCache};
use quasirb::online::{JacobianMode, OnlineOptions};
use quasirb::truth::{NewtonOptions, TruthProblem};

pub const MAGNET_FIELD: f64 = 3e5;

pub fn benchmark_problem(level: u32) -> TruthProblem {
    TruthProblem::new(
        benchmark_cell(),
        level,
        BoundaryMode::AntiPeriodic,
        ReluctivityModel::default_curve(),
        SourceData::magnet(MAGNET_FIELD),
    )
    .unwrap()
}

pub fn random_params(problem: &TruthProblem, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &problem.geometry.parameter_box;
    (0..n)
        .map(|_| {
            let t: Vec<f64> = (0..b.dims()).map(|_| rng.gen::<f64>()).collect();
            b.from_unit(&t)
        })
        .collect()
}

pub fn random_vector(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect()
}

pub fn tight_newton() -> NewtonOptions {
    NewtonOptions {
        tol: 1e-10,
        ..NewtonOptions::default()
    }
}

pub fn tight_online() -> OnlineOptions {
    OnlineOptions {
        tol: 1e-10,
        jacobian: JacobianMode::Full,
        ..OnlineOptions::default()
    }
}

pub struct Fixture {
    pub problem: TruthProblem,
    pub model: RbModel,
}

/// Level-2 benchmark with a small greedy model (EIM from a 3×3×3 truth grid,
/// 3×3×3 training grid, N ≤ 6).
pub fn small_fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let problem = benchmark_problem(2);
        let grid = problem.geometry.parameter_box.grid(&[3, 3, 3]);
        let opts = GreedyOptions {
            eps_rb: 1e-12,
            n_max: 6,
            newton: tight_newton(),
            ..GreedyOptions::default()
        };
        let mut cache = SnapshotCache::new();
        let fields = truth_nonlinearity_fields(&problem, &grid, &opts, &mut cache).unwrap();
        let eim = eim_build(&fields, 0.0, 8);
        let (model, _) = greedy_build(&problem, &grid, eim, 200.0, &opts, &mut cache).unwrap();
        Fixture { problem, model }
    })
}
