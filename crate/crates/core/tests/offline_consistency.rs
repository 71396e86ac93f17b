mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use quasirb::eim::{eim_build, NonlinearityField};
use quasirb::error::Error;
use quasirb::fem::BoundaryMode;
use quasirb::geometry::benchmark_cell;
use quasirb::linalg::to_dense;
use quasirb::material::{ReluctivityModel, SourceData};
use quasirb::offline::{
    gram_schmidt_insert, greedy_build, residual_pieces, GreedyOptions, InsertOutcome, RbModel, SnapshotCache,
};
use quasirb::online::{effectivity, Effectivity, estimate_error, lift_coefficients, OnlineOptions, OnlineSystem, ReducedSolution};
use quasirb::store::{load_model, model_from_bytes, model_to_bytes, save_model};
use quasirb::truth::TruthProblem;

fn basis_columns(model: &RbModel) -> Vec<Vec<f64>> {
    (0..model.n()).map(|j| model.basis.column(j).iter().copied().collect()).collect()
}

/// EIM coefficients and the EIM-form truth operator for the lifted state,
/// computed on the truth side.
fn truth_eim_operator(problem: &TruthProblem, model: &RbModel, p: &[f64], lifted: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let ctx = problem.context(p).unwrap();
    let mesh = &problem.space.mesh;
    let values: Vec<f64> = model
        .eim
        .magic
        .iter()
        .map(|&k| problem.material.evaluate(ctx.flux(mesh.iron[k], lifted)))
        .collect();
    let phi = model.eim.coefficients(&values);
    let a = to_dense(&ctx.operator_with_iron_values(&model.eim.evaluate(&phi)));
    (phi, a)
}

#[test]
fn basis_is_orthonormal() {
    let fx = small_fixture();
    let k = to_dense(fx.problem.space.gram());
    let z = &fx.model.basis;
    let g = z.transpose() * k * z;
    let id = DMatrix::<f64>::identity(fx.model.n(), fx.model.n());
    assert!((g - id).amax() <= 1e-10);
}

#[test]
fn recombination_equals_direct_projection() {
    let fx = small_fixture();
    let (problem, model) = (&fx.problem, &fx.model);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = &model.basis;
    let mut params = random_params(problem, 4, 9);
    params.push(problem.geometry.reference_parameter.clone());
    for p in params {
        let w = random_vector(model.n(), 4e-3, &mut rng);
        let lifted = lift_coefficients(model, &w);
        let (phi, a_truth) = truth_eim_operator(problem, model, &p, &lifted);
        let sys = OnlineSystem::new(model, &p).unwrap();
        let phi_rb = sys.eim_coefficients(&w);
        for (a, b) in phi.iter().zip(&phi_rb) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
        let direct = z.transpose() * &a_truth * z;
        let reduced = sys.operator(&phi_rb);
        assert!((&reduced - &direct).norm() <= 1e-10 * direct.norm());
        let load = DVector::from_vec(problem.context(&p).unwrap().load());
        let direct_load = z.transpose() * load;
        assert!((sys.load() - &direct_load).norm() <= 1e-10 * direct_load.norm());
    }
}

#[test]
fn dual_norm_matches_riesz_solve() {
    let fx = small_fixture();
    let (problem, full) = (&fx.problem, &fx.model);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for model in [full.clone(), full.truncate(1, 1), full.truncate(3, 5)] {
        assert_eq!(model.gram.nrows(), model.q_r());
        for p in random_params(problem, 5, 17) {
            let w = random_vector(model.n(), 4e-3, &mut rng);
            let lifted = lift_coefficients(&model, &w);
            let (phi, a_truth) = truth_eim_operator(problem, &model, &p, &lifted);
            let load = DVector::from_vec(problem.context(&p).unwrap().load());
            let r = load - a_truth * DVector::from_vec(lifted);
            let direct = problem.space.dual_norm(r.as_slice()).unwrap();
            let sol = ReducedSolution {
                parameter: p.clone(),
                coefficients: w,
                phi,
                iterations: 0,
                residual: 0.0,
                history: vec![],
                jacobian: quasirb::online::JacobianMode::Picard,
                solve_time: Default::default(),
            };
            let cert = estimate_error(&model, &sol, &OnlineOptions::default()).unwrap();
            assert!(
                (cert.dual_norm - direct).abs() <= 1e-8 * direct,
                "{} vs {direct}",
                cert.dual_norm
            );
        }
    }
}

#[test]
fn residual_count_and_gram_structure() {
    let fx = small_fixture();
    let m = &fx.model;
    assert_eq!(m.q_r(), m.q_f() + m.n() * (m.m() + 4 * m.m() * m.l1() + 4 * m.l2()));
    assert_eq!(m.gram.shape(), (m.q_r(), m.q_r()));
    assert_eq!(m.gram, m.gram.transpose());
    let eig = m.gram.clone().symmetric_eigen().eigenvalues;
    let top = eig.amax();
    assert!(eig.min() >= -1e-10 * top);
    let pieces = residual_pieces(&fx.problem, &basis_columns(m)[0], &m.eim, &m.iron_macros, &m.other_macros);
    assert_eq!(pieces.ncols(), m.block_size());
}

#[test]
fn gram_schmidt_insertion() {
    let problem = benchmark_problem(1);
    let space = &problem.space;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = random_vector(problem.dim(), 1.0, &mut rng);
    let InsertOutcome::Inserted(z1) = gram_schmidt_insert(space, &[], &v) else {
        panic!("first snapshot rejected")
    };
    let norm = space.x_norm(&v).unwrap();
    for (a, b) in z1.iter().zip(&v) {
        assert!((a - b / norm).abs() <= 1e-14 * (b / norm).abs().max(1.0));
    }
    assert!(matches!(
        gram_schmidt_insert(space, std::slice::from_ref(&z1), &z1),
        InsertOutcome::Rejected { .. }
    ));
    let mut basis = vec![];
    for _ in 0..5 {
        let s = random_vector(problem.dim(), 1.0, &mut rng);
        match gram_schmidt_insert(space, &basis, &s) {
            InsertOutcome::Inserted(z) => basis.push(z),
            InsertOutcome::Rejected { .. } => panic!("random snapshot rejected"),
        }
    }
    for i in 0..5 {
        for j in 0..5 {
            let g = space.x_inner(&basis[i], &basis[j]).unwrap();
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() <= 1e-10);
        }
    }
}

#[test]
fn snapshots_are_reproduced() {
    let fx = small_fixture();
    let (problem, model) = (&fx.problem, &fx.model);
    let opts = tight_online();
    for p in &model.parameters {
        let truth = problem.newton_solve(p, &tight_newton(), None).unwrap();
        let sys = OnlineSystem::new(model, p).unwrap();
        let sol = sys.solve(&opts, None).unwrap();
        let cert = estimate_error(model, &sol, &opts).unwrap();
        let e: Vec<f64> = lift_coefficients(model, &sol.coefficients)
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| a - b)
            .collect();
        let err = problem.space.x_norm(&e).unwrap();
        assert!(err <= 10.0 * cert.delta_eim, "error {err:e}, EIM part {:e}", cert.delta_eim);
    }
}

#[test]
fn single_training_point() {
    let problem = benchmark_problem(1);
    let p = problem.geometry.parameter_box.midpoint();
    let mut cache = SnapshotCache::new();
    let truth = cache.solve(&problem, &p, &tight_newton()).unwrap().clone();
    let field = NonlinearityField {
        parameter: p.clone(),
        values: problem.context(&p).unwrap().nonlinearity_field(&truth.values),
    };
    let eim = eim_build(&[field], 0.0, 1);
    let opts = GreedyOptions {
        online: tight_online(),
        ..GreedyOptions::default()
    };
    let (model, history) = greedy_build(&problem, std::slice::from_ref(&p), eim, 200.0, &opts, &mut cache).unwrap();
    assert_eq!(model.n(), 1);
    let delta = history.rounds[0].max_delta;
    let sol = OnlineSystem::new(&model, &p).unwrap().solve(&tight_online(), None).unwrap();
    let e: Vec<f64> = lift_coefficients(&model, &sol.coefficients)
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| a - b)
        .collect();
    let err = problem.space.x_norm(&e).unwrap();
    let size = problem.space.x_norm(&truth.values).unwrap();
    // the estimator cannot drop below the square-root round-off floor of the
    // Gram-matrix evaluation
    assert!(err <= delta && delta <= 1e-4 * size, "error {err:e}, estimator {delta:e}");
}

#[test]
fn linear_problem_greedy_is_rigorous() {
    let nu = 500.0;
    let problem = TruthProblem::new(
        benchmark_cell(),
        2,
        BoundaryMode::AntiPeriodic,
        ReluctivityModel::constant(nu),
        SourceData::magnet(MAGNET_FIELD),
    )
    .unwrap();
    let train = problem.geometry.parameter_box.grid(&[3, 3, 3]);
    let mut cache = SnapshotCache::new();
    let p0 = &train[0];
    let sol = cache.solve(&problem, p0, &tight_newton()).unwrap();
    assert_eq!(sol.iterations, 1);
    let field = NonlinearityField {
        parameter: p0.clone(),
        values: problem.context(p0).unwrap().nonlinearity_field(&sol.values),
    };
    let eim = eim_build(&[field], 0.0, 1);
    assert_eq!(eim.len(), 1);
    let opts = GreedyOptions {
        eps_rb: 1e-3,
        n_max: 20,
        newton: tight_newton(),
        ..GreedyOptions::default()
    };
    let (model, history) = greedy_build(&problem, &train, eim, nu, &opts, &mut cache).unwrap();
    assert!(history.final_max_delta() <= opts.eps_rb);
    let online = OnlineOptions::default();
    for p in &train {
        let sys = OnlineSystem::new(&model, p).unwrap();
        let sol = sys.solve(&online, None).unwrap();
        assert_eq!(sol.iterations, 1);
        let direct = sys.operator(&sol.phi).lu().solve(sys.load()).unwrap();
        for (a, b) in sol.coefficients.iter().zip(direct.iter()) {
            assert!((a - b).abs() <= 1e-10 * direct.amax());
        }
        let cert = estimate_error(&model, &sol, &online).unwrap();
        let truth = problem.newton_solve(p, &tight_newton(), None).unwrap();
        let e: Vec<f64> = lift_coefficients(&model, &sol.coefficients)
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| a - b)
            .collect();
        let err = problem.space.x_norm(&e).unwrap();
        // at snapshot parameters both sides sit at round-off level
        let exact = effectivity(&cert, err) == Effectivity::ExactWithinPrecision;
        assert!(err <= cert.delta || exact, "error {err:e} above estimator {:e}", cert.delta);
    }
}

#[test]
fn container_round_trip() {
    let fx = small_fixture();
    let model = &fx.model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.qrb");
    save_model(model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(&loaded, model);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(model_to_bytes(&loaded), bytes);
    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(model_from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))));
    }
    let mut wrong = bytes.clone();
    wrong[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(model_from_bytes(&wrong), Err(Error::Version { found: 7, .. })));
    let opts = OnlineOptions::default();
    let p = random_params(&fx.problem, 1, 2)[0].clone();
    let a = OnlineSystem::new(model, &p).unwrap().solve(&opts, None).unwrap();
    let b = OnlineSystem::new(&loaded, &p).unwrap().solve(&opts, None).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
    let ca = estimate_error(model, &a, &opts).unwrap();
    let cb = estimate_error(&loaded, &b, &opts).unwrap();
    assert_eq!(ca.delta, cb.delta);
}
