mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use quasirb::eim::{eim_build, NonlinearityField};
use quasirb::fem::BoundaryMode;
use quasirb::geometry::benchmark_cell;
use quasirb::material::{ReluctivityModel, SourceData};
use quasirb::offline::ModelBuilder;
use quasirb::online::{
    effectivity, estimate_error, lift, lift_coefficients, reduced_newton, solve_and_estimate_batch, Effectivity,
    ErrorCertificate, JacobianMode, NuLbMode, OnlineOptions, OnlineSystem,
};
use quasirb::par::Execution;
use quasirb::truth::TruthProblem;

#[test]
fn full_and_picard_share_the_fixed_point() {
    let fx = small_fixture();
    for p in random_params(&fx.problem, 5, 21) {
        let full = reduced_newton(&fx.model, &p, &tight_online()).unwrap();
        let picard_opts = OnlineOptions {
            jacobian: JacobianMode::Picard,
            ..tight_online()
        };
        let picard = reduced_newton(&fx.model, &p, &picard_opts).unwrap();
        assert!(full.iterations <= picard.iterations);
        for (a, b) in full.coefficients.iter().zip(&picard.coefficients) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn bound_holds_with_certified_floor() {
    let fx = small_fixture();
    let opts = OnlineOptions {
        nu_lb: NuLbMode::CertifiedFloor,
        ..OnlineOptions::default()
    };
    let nu0 = fx.model.material.nu0;
    for p in random_params(&fx.problem, 10, 33) {
        let sol = reduced_newton(&fx.model, &p, &opts).unwrap();
        let cert = estimate_error(&fx.model, &sol, &opts).unwrap();
        let truth = fx.problem.newton_solve(&p, &tight_newton(), None).unwrap();
        let e: Vec<f64> = lift(&fx.model, &sol).iter().zip(&truth.values).map(|(a, b)| a - b).collect();
        let err = fx.problem.space.x_norm(&e).unwrap();
        assert!(err <= cert.delta, "error {err:e} exceeds estimator {:e}", cert.delta);
        assert_eq!(cert.nu_lb, fx.model.nu_lb_floor);
        let ceiling = 3.0 * nu0 / cert.nu_lb * (cert.c1 * cert.c2).sqrt();
        assert!(cert.delta_rb / err <= ceiling * (1.0 + cert.delta_eim / cert.delta_rb));
    }
}

#[test]
fn certificate_components() {
    let fx = small_fixture();
    let opts = OnlineOptions::default();
    for p in random_params(&fx.problem, 4, 5) {
        let sol = reduced_newton(&fx.model, &p, &opts).unwrap();
        assert!(sol.residual <= opts.tol);
        let cert = estimate_error(&fx.model, &sol, &opts).unwrap();
        assert_eq!(cert.delta, cert.delta_rb + cert.delta_eim);
        assert!(cert.delta_rb >= 0.0 && cert.delta_eim >= 0.0);
        assert!(cert.nu_lb >= fx.model.nu_lb_floor);
        assert!(cert.nu_lb <= cert.min_iron_nu);
        let norm: f64 = sol.coefficients.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_eq!(cert.solution_norm, norm);
        let unchecked = OnlineOptions {
            eim_error: false,
            ..opts
        };
        let partial = estimate_error(&fx.model, &sol, &unchecked).unwrap();
        assert!(!partial.certified && partial.delta_eim == 0.0);
        assert_eq!(partial.delta_rb, cert.delta_rb);
    }
}

#[test]
fn batch_matches_single_queries() {
    let fx = small_fixture();
    let opts = OnlineOptions::default();
    let params = random_params(&fx.problem, 12, 8);
    let seq = solve_and_estimate_batch(&fx.model, &params, &opts, Execution::Sequential);
    let par = solve_and_estimate_batch(&fx.model, &params, &opts, Execution::Parallel);
    for ((p, a), b) in params.iter().zip(seq).zip(par) {
        let (sa, ca) = a.unwrap();
        let (sb, cb) = b.unwrap();
        assert_eq!(sa.coefficients, sb.coefficients);
        let single = estimate_error(&fx.model, &reduced_newton(&fx.model, p, &opts).unwrap(), &opts).unwrap();
        // the radicand cancels, so summation order shows up well above ulp level
        for c in [&ca, &cb] {
            assert!((c.delta - single.delta).abs() <= 1e-6 * single.delta);
        }
    }
    let outside = vec![vec![0.0, 0.0, 0.0]];
    assert!(solve_and_estimate_batch(&fx.model, &outside, &opts, Execution::Sequential)[0].is_err());
}

#[test]
fn lift_is_isometric() {
    let fx = small_fixture();
    let model = &fx.model;
    let space = &fx.problem.space;
    let zero = lift_coefficients(model, &vec![0.0; model.n()]);
    assert!(zero.iter().all(|&x| x == 0.0));
    let mut e1 = vec![0.0; model.n()];
    e1[0] = 1.0;
    let first: Vec<f64> = model.basis.column(0).iter().copied().collect();
    assert_eq!(lift_coefficients(model, &e1), first);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let c = random_vector(model.n(), 1.0, &mut rng);
        let euclid: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let x = space.x_norm(&lift_coefficients(model, &c)).unwrap();
        assert!((x - euclid).abs() <= 1e-10 * euclid);
    }
}

#[test]
fn zero_sources_give_zero_certificate() {
    let problem = TruthProblem::new(
        benchmark_cell(),
        2,
        BoundaryMode::AntiPeriodic,
        ReluctivityModel::default_curve(),
        SourceData::zero(),
    )
    .unwrap();
    let p = problem.geometry.parameter_box.midpoint();
    let truth = problem.newton_solve(&p, &Default::default(), None).unwrap();
    assert!(truth.values.iter().all(|&x| x == 0.0));
    assert_eq!(truth.iterations, 1);
    let field = NonlinearityField {
        parameter: p.clone(),
        values: problem.context(&p).unwrap().nonlinearity_field(&truth.values),
    };
    let eim = eim_build(&[field], 0.0, 1);
    let donor = &small_fixture().model;
    let mut builder = ModelBuilder::new(&problem, eim, 200.0).unwrap();
    builder
        .push(donor.basis.column(0).iter().copied().collect(), p.clone())
        .unwrap();
    let model = builder.into_model();
    assert_eq!(model.q_f(), 0);
    let opts = OnlineOptions::default();
    for q in random_params(&problem, 3, 4) {
        let sol = reduced_newton(&model, &q, &opts).unwrap();
        assert!(sol.coefficients.iter().all(|&x| x == 0.0));
        let cert = estimate_error(&model, &sol, &opts).unwrap();
        assert_eq!(cert.delta, 0.0);
    }
}

#[test]
fn reference_parameter_has_unit_constants() {
    let fx = small_fixture();
    let p = fx.problem.geometry.reference_parameter.clone();
    let sys = OnlineSystem::new(&fx.model, &p).unwrap();
    let sol = sys.solve(&OnlineOptions::default(), None).unwrap();
    let cert = estimate_error(&fx.model, &sol, &OnlineOptions::default()).unwrap();
    assert!((cert.c1 - 1.0).abs() <= 1e-12 && (cert.c2 - 1.0).abs() <= 1e-12);
}

fn cert_with(delta: f64) -> ErrorCertificate {
    ErrorCertificate {
        delta,
        delta_rb: delta,
        delta_eim: 0.0,
        dual_norm: 0.0,
        eim_error: 0.0,
        solution_norm: 0.0,
        c1: 1.0,
        c2: 1.0,
        nu_lb: 1.0,
        nu_lb_mode: NuLbMode::CertifiedFloor,
        certified: true,
        min_iron_nu: 1.0,
        estimator_time: Default::default(),
        sweep_time: Default::default(),
    }
}

#[test]
fn effectivity_ratio_and_guard() {
    match effectivity(&cert_with(2e-3), 1e-5) {
        Effectivity::Ratio(r) => assert!((r - 200.0).abs() < 1e-9),
        other => panic!("{other:?}"),
    }
    assert_eq!(effectivity(&cert_with(1e-3), 0.0), Effectivity::ExactWithinPrecision);
}
