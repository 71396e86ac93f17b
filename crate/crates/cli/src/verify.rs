//! Verification against truth solves on the test set: rigor, effectivity,
//! convergence tables and the estimator split.

use std::path::Path;

use anyhow::{bail, Result};

use quasirb::offline::RbModel;
use quasirb::online::{effectivity, lift, solve_and_estimate_batch, Effectivity, ErrorCertificate, NuLbMode, OnlineOptions};
use quasirb::par;
use quasirb::truth::{NewtonOptions, TruthProblem, TruthSolution};

use crate::config::RunConfig;
use crate::pipeline::{self, csv_writer};

/// Online result at one test parameter, compared with the truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub parameter: Vec<f64>,
    pub true_error: f64,
    pub certificate: ErrorCertificate,
    pub effectivity: Effectivity,
}

impl Sample {
    pub fn violates(&self) -> bool {
        self.certificate.delta < self.true_error && !matches!(self.effectivity, Effectivity::ExactWithinPrecision)
    }

    /// `2 (3ν0/ν_LB) sqrt(C1 C2) (1 + Δ^EIM/Δ^RB)`.
    pub fn effectivity_ceiling(&self, nu0: f64) -> f64 {
        let c = &self.certificate;
        let correction = if c.delta_rb > 0.0 { 1.0 + c.delta_eim / c.delta_rb } else { f64::INFINITY };
        2.0 * 3.0 * nu0 / c.nu_lb * (c.c1 * c.c2).sqrt() * correction
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub n: usize,
    pub m: usize,
    pub max_delta: f64,
    pub mean_delta: f64,
    /// Mean and max over parameters with a meaningful ratio; NaN when none.
    pub mean_effectivity: f64,
    pub max_effectivity: f64,
    pub violations: usize,
    pub exact: usize,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub tested: usize,
    /// Test parameters whose truth solve failed, with the error message.
    pub truth_failures: Vec<(Vec<f64>, String)>,
    /// Full model, certified-floor `ν_LB`.
    pub floor_samples: Vec<Sample>,
    /// Full model, configured `ν_LB` mode.
    pub samples: Vec<Sample>,
    pub table: Vec<TableRow>,
    /// `(m, n, max Δ)` over the test set.
    pub convergence: Vec<(usize, usize, f64)>,
    /// `(n, max Δ^RB, max Δ^EIM)` at the full `M`.
    pub split: Vec<(usize, f64, f64)>,
}

impl VerifyReport {
    pub fn floor_violations(&self) -> usize {
        self.floor_samples.iter().filter(|s| s.violates()).count()
    }
}

pub fn truth_solutions(
    problem: &TruthProblem,
    params: &[Vec<f64>],
    opts: &NewtonOptions,
    exec: par::Execution,
) -> Vec<quasirb::error::Result<TruthSolution>> {
    par::map(exec, params, |p| problem.newton_solve(p, opts, None))
}

/// Certifies `model` at every truth parameter and measures the true error.
pub fn compare(
    problem: &TruthProblem,
    model: &RbModel,
    truths: &[TruthSolution],
    opts: &OnlineOptions,
    exec: par::Execution,
) -> Result<Vec<Sample>> {
    let params: Vec<Vec<f64>> = truths.iter().map(|t| t.parameter.clone()).collect();
    let results = solve_and_estimate_batch(model, &params, opts, exec);
    let mut out = Vec::with_capacity(truths.len());
    for (truth, r) in truths.iter().zip(results) {
        let (sol, cert) = r?;
        let diff: Vec<f64> = lift(model, &sol).iter().zip(&truth.values).map(|(a, b)| a - b).collect();
        let true_error = problem.space.x_norm(&diff)?;
        out.push(Sample {
            parameter: truth.parameter.clone(),
            true_error,
            effectivity: effectivity(&cert, true_error),
            certificate: cert,
        });
    }
    Ok(out)
}

pub fn table_row(n: usize, m: usize, samples: &[Sample]) -> TableRow {
    let deltas: Vec<f64> = samples.iter().map(|s| s.certificate.delta).collect();
    let ratios: Vec<f64> = samples
        .iter()
        .filter_map(|s| match s.effectivity {
            Effectivity::Ratio(r) => Some(r),
            Effectivity::ExactWithinPrecision => None,
        })
        .collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    TableRow {
        n,
        m,
        max_delta: deltas.iter().copied().fold(0.0, f64::max),
        mean_delta: mean(&deltas),
        mean_effectivity: mean(&ratios),
        max_effectivity: ratios.iter().copied().fold(f64::NAN, f64::max),
        violations: samples.iter().filter(|s| s.violates()).count(),
        exact: samples.len() - ratios.len(),
    }
}

fn sizes(requested: &[usize], full: usize) -> Vec<usize> {
    let mut v: Vec<usize> = requested.iter().copied().filter(|&k| k >= 1 && k <= full).collect();
    v.push(full);
    v.sort_unstable();
    v.dedup();
    v
}

pub fn cmd_verify(cfg: &RunConfig, model: &RbModel) -> Result<VerifyReport> {
    let problem = pipeline::problem(cfg)?;
    if problem.dim() != model.basis.nrows() {
        bail!(
            "model has {} truth unknowns, the configured mesh {}",
            model.basis.nrows(),
            problem.dim()
        );
    }
    let exec = pipeline::execution(cfg);
    let params = pipeline::test_parameters(cfg, &model.geometry.parameter_box)?;
    let newton = NewtonOptions {
        tol: cfg.tolerances.verify_truth,
        ..NewtonOptions::default()
    };
    let mut truths = Vec::new();
    let mut truth_failures = Vec::new();
    for (p, r) in params.iter().zip(truth_solutions(&problem, &params, &newton, exec)) {
        match r {
            Ok(t) => truths.push(t),
            Err(e) => {
                log::warn!("truth solve failed at {p:?}, excluded: {e}");
                truth_failures.push((p.clone(), e.to_string()));
            }
        }
    }
    let opts = pipeline::online_options(cfg)?;
    let floor_opts = OnlineOptions {
        nu_lb: NuLbMode::CertifiedFloor,
        eim_error: true,
        ..opts
    };
    let floor_samples = compare(&problem, model, &truths, &floor_opts, exec)?;
    let samples = compare(&problem, model, &truths, &opts, exec)?;

    let ns = sizes(&cfg.verify.n, model.n());
    let ms = sizes(&cfg.verify.m, model.m());
    let mut table = Vec::new();
    for &m in &ms {
        for &n in &ns {
            let sub = model.truncate(n, m);
            let s = compare(&problem, &sub, &truths, &opts, exec)?;
            table.push(table_row(n, m, &s));
        }
    }

    // estimator only, no truth needed
    let test: Vec<Vec<f64>> = truths.iter().map(|t| t.parameter.clone()).collect();
    let mut convergence = Vec::new();
    let mut split = Vec::new();
    for &m in &ms {
        for n in 1..=model.n() {
            let sub = model.truncate(n, m);
            let certs: Vec<ErrorCertificate> = solve_and_estimate_batch(&sub, &test, &opts, exec)
                .into_iter()
                .map(|r| r.map(|(_, c)| c))
                .collect::<quasirb::error::Result<_>>()?;
            convergence.push((m, n, certs.iter().map(|c| c.delta).fold(0.0, f64::max)));
            if m == model.m() {
                split.push((
                    n,
                    certs.iter().map(|c| c.delta_rb).fold(0.0, f64::max),
                    certs.iter().map(|c| c.delta_eim).fold(0.0, f64::max),
                ));
            }
        }
    }

    let report = VerifyReport {
        tested: params.len(),
        truth_failures,
        floor_samples,
        samples,
        table,
        convergence,
        split,
    };
    write_report(&report, model, &cfg.output)?;
    log::info!(
        "verify: {} parameters, {} truth failures, {} floor-mode violations",
        report.tested,
        report.truth_failures.len(),
        report.floor_violations()
    );
    Ok(report)
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_report(report: &VerifyReport, model: &RbModel, dir: &Path) -> Result<()> {
    let mut w = csv_writer(dir, "verify_table.csv")?;
    w.write_record(["n", "m", "max_delta", "mean_delta", "mean_effectivity", "max_effectivity", "violations", "exact"])?;
    for r in &report.table {
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            sci(r.max_delta),
            sci(r.mean_delta),
            sci(r.mean_effectivity),
            sci(r.max_effectivity),
            r.violations.to_string(),
            r.exact.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "verify_samples.csv")?;
    w.write_record([
        "parameter",
        "true_error",
        "delta_floor",
        "delta",
        "delta_rb",
        "delta_eim",
        "effectivity",
        "effectivity_ceiling",
        "c1",
        "c2",
        "nu_lb",
    ])?;
    for (f, s) in report.floor_samples.iter().zip(&report.samples) {
        let eta = match s.effectivity {
            Effectivity::Ratio(r) => sci(r),
            Effectivity::ExactWithinPrecision => "exact".into(),
        };
        let c = &s.certificate;
        w.write_record([
            s.parameter.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            sci(s.true_error),
            sci(f.certificate.delta),
            sci(c.delta),
            sci(c.delta_rb),
            sci(c.delta_eim),
            eta,
            sci(s.effectivity_ceiling(model.material.nu0)),
            c.c1.to_string(),
            c.c2.to_string(),
            c.nu_lb.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "verify_rigor.csv")?;
    w.write_record(["tested", "truth_failures", "floor_violations"])?;
    w.write_record([
        report.tested.to_string(),
        report.truth_failures.len().to_string(),
        report.floor_violations().to_string(),
    ])?;
    w.flush()?;

    let mut w = csv_writer(dir, "convergence.csv")?;
    w.write_record(["m", "n", "max_delta"])?;
    for (m, n, d) in &report.convergence {
        w.write_record([m.to_string(), n.to_string(), sci(*d)])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "estimator_split.csv")?;
    w.write_record(["n", "max_delta_rb", "max_delta_eim"])?;
    for (n, rb, eim) in &report.split {
        w.write_record([n.to_string(), sci(*rb), sci(*eim)])?;
    }
    w.flush()?;
    Ok(())
}
