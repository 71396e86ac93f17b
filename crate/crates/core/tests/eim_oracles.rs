mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use quasirb::eim::{eim_build, EimApproximation, NonlinearityField};
use quasirb::offline::{truth_nonlinearity_fields, GreedyOptions, SnapshotCache};

/// Interpolation error of `field` on the given points and basis, by a dense
/// solve of the full interpolation system.
fn dense_interpolation_error(basis: &[Vec<f64>], points: &[usize], field: &[f64]) -> (f64, usize) {
    let m = basis.len();
    let approx: Vec<f64> = if m == 0 {
        vec![0.0; field.len()]
    } else {
        let b = DMatrix::from_fn(m, m, |i, j| basis[j][points[i]]);
        let rhs = DVector::from_iterator(m, points.iter().map(|&i| field[i]));
        let c = b.lu().solve(&rhs).unwrap();
        (0..field.len()).map(|k| (0..m).map(|j| c[j] * basis[j][k]).sum()).collect()
    };
    let mut best = (-1.0, 0);
    for (k, (a, b)) in field.iter().zip(&approx).enumerate() {
        if (a - b).abs() > best.0 {
            best = ((a - b).abs(), k);
        }
    }
    best
}

/// Textbook greedy: each step interpolates every field from scratch.
fn reference_eim(fields: &[NonlinearityField], m_max: usize) -> (Vec<usize>, Vec<f64>) {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut points = Vec::new();
    let mut history = Vec::new();
    while basis.len() < m_max {
        let mut worst = (-1.0, 0, 0);
        for (f, field) in fields.iter().enumerate() {
            let (e, k) = dense_interpolation_error(&basis, &points, &field.values);
            if e > worst.0 {
                worst = (e, f, k);
            }
        }
        history.push(worst.0);
        let (_, f, k) = worst;
        let m = basis.len();
        let field = &fields[f].values;
        let residual: Vec<f64> = if m == 0 {
            field.clone()
        } else {
            let b = DMatrix::from_fn(m, m, |i, j| basis[j][points[i]]);
            let rhs = DVector::from_iterator(m, points.iter().map(|&i| field[i]));
            let c = b.lu().solve(&rhs).unwrap();
            (0..field.len())
                .map(|x| field[x] - (0..m).map(|j| c[j] * basis[j][x]).sum::<f64>())
                .collect()
        };
        basis.push(residual.iter().map(|r| r / residual[k]).collect());
        points.push(k);
    }
    (points, history)
}

fn truth_fields() -> Vec<NonlinearityField> {
    let problem = benchmark_problem(2);
    let grid = problem.geometry.parameter_box.grid(&[3, 3, 3]);
    truth_nonlinearity_fields(&problem, &grid, &GreedyOptions::default(), &mut SnapshotCache::new()).unwrap()
}

fn check_structure(e: &EimApproximation) {
    let m = e.len();
    for i in 0..m {
        assert!((e.matrix[(i, i)] - 1.0).abs() <= 1e-12);
        for j in 0..m {
            assert!(e.matrix[(i, j)].abs() <= 1.0 + 1e-12);
            if j > i {
                assert_eq!(e.matrix[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn incremental_greedy_matches_dense_reference() {
    let fields = truth_fields();
    let e = eim_build(&fields, 0.0, 10);
    let (points, history) = reference_eim(&fields, e.len());
    assert_eq!(e.magic, points);
    for (a, b) in e.history.iter().zip(&history) {
        assert!((a - b).abs() <= 1e-8 * history[0], "{a} vs {b}");
    }
    check_structure(&e);
}

#[test]
fn tolerance_reached_on_training_set() {
    let fields = truth_fields();
    let eps = 0.5;
    let e = eim_build(&fields, eps, 40);
    assert!(*e.history.last().unwrap() <= eps);
    for f in &fields {
        assert!(e.interpolation_error(&f.values) <= eps);
    }
}

#[test]
fn identical_inputs_identical_points() {
    let fields = truth_fields();
    let a = eim_build(&fields, 0.0, 12);
    let b = eim_build(&fields.clone(), 0.0, 12);
    assert_eq!(a.magic, b.magic);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn exact_at_magic_points(
        fields in prop::collection::vec(prop::collection::vec(100.0f64..500.0, 40), 2..8),
        probe in prop::collection::vec(100.0f64..500.0, 40),
    ) {
        let fields: Vec<NonlinearityField> = fields
            .into_iter()
            .map(|values| NonlinearityField { parameter: vec![], values })
            .collect();
        let e = eim_build(&fields, 0.0, 8);
        check_structure(&e);
        let approx = e.interpolate(&probe);
        for &k in &e.magic {
            prop_assert!((approx[k] - probe[k]).abs() <= 1e-10 * probe[k].abs());
        }
        for f in fields.iter().filter(|_| e.len() == fields.len()) {
            prop_assert!(e.interpolation_error(&f.values) <= 1e-9 * 500.0);
        }
    }
}
