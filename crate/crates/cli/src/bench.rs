//! Wall-clock comparison of truth and reduced solves.

use std::time::{Duration, Instant};

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quasirb::offline::RbModel;
use quasirb::online::{estimate_error, reduced_newton, OnlineOptions};
use quasirb::truth::{NewtonOptions, TruthProblem};

use crate::config::RunConfig;
use crate::pipeline::{self, csv_writer};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub samples: usize,
    pub truth: Duration,
    /// Reduced Newton solve only.
    pub online: Duration,
    /// Reduced solve plus certificate.
    pub online_with_estimator: Duration,
    /// Certificate time minus the EIM sweep over the iron triangles.
    pub estimator_without_sweep: Duration,
    /// EIM error sweep over the iron triangles.
    pub sweep: Duration,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.truth.as_secs_f64() / self.online.as_secs_f64()
    }

    pub fn speedup_with_estimator(&self) -> f64 {
        self.truth.as_secs_f64() / self.online_with_estimator.as_secs_f64()
    }

    /// Online time that does not depend on the mesh.
    pub fn mesh_independent(&self) -> Duration {
        self.online + self.estimator_without_sweep
    }
}

/// `n` parameters drawn uniformly from the model's box.
pub fn bench_parameters(model: &RbModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let b = &model.geometry.parameter_box;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t: Vec<f64> = (0..b.dims()).map(|_| rng.gen::<f64>()).collect();
            b.from_unit(&t)
        })
        .collect()
}

/// Best of `repeats` runs of `f`.
fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Duration, T)> {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed());
        last = Some(v);
    }
    Ok((best, last.expect("at least one run")))
}

fn mean(total: Duration, n: usize) -> Duration {
    total / n.max(1) as u32
}

/// Sequential timings (one parameter at a time) so that the ratios compare
/// single-query costs.
pub fn measure(
    problem: Option<&TruthProblem>,
    model: &RbModel,
    params: &[Vec<f64>],
    newton: &NewtonOptions,
    online: &OnlineOptions,
    repeats: usize,
) -> Result<BenchReport> {
    let mut truth = Duration::ZERO;
    let mut solve = Duration::ZERO;
    let mut with_est = Duration::ZERO;
    let mut no_sweep = Duration::ZERO;
    let mut sweep = Duration::ZERO;
    for p in params {
        if let Some(problem) = problem {
            truth += best_of(repeats, || Ok(problem.newton_solve(p, newton, None)?))?.0;
        }
        solve += best_of(repeats, || Ok(reduced_newton(model, p, online)?))?.0;
        let (t, cert) = best_of(repeats, || {
            let sol = reduced_newton(model, p, online)?;
            Ok(estimate_error(model, &sol, online)?)
        })?;
        with_est += t;
        no_sweep += cert.estimator_time.saturating_sub(cert.sweep_time);
        sweep += cert.sweep_time;
    }
    let n = params.len();
    Ok(BenchReport {
        samples: n,
        truth: mean(truth, n),
        online: mean(solve, n),
        online_with_estimator: mean(with_est, n),
        estimator_without_sweep: mean(no_sweep, n),
        sweep: mean(sweep, n),
    })
}

pub fn cmd_bench(cfg: &RunConfig, model: &RbModel) -> Result<BenchReport> {
    let problem = pipeline::problem(cfg)?;
    let params = bench_parameters(model, cfg.bench.samples.max(20), cfg.seed);
    let report = measure(
        Some(&problem),
        model,
        &params,
        &pipeline::newton_options(cfg),
        &pipeline::online_options(cfg)?,
        cfg.bench.repeats,
    )?;
    let mut w = csv_writer(&cfg.output, "bench.csv")?;
    w.write_record([
        "samples",
        "n",
        "m",
        "truth_unknowns",
        "truth_s",
        "online_s",
        "online_with_estimator_s",
        "eim_sweep_s",
        "speedup",
        "speedup_with_estimator",
    ])?;
    w.write_record([
        report.samples.to_string(),
        model.n().to_string(),
        model.m().to_string(),
        problem.dim().to_string(),
        format!("{:e}", report.truth.as_secs_f64()),
        format!("{:e}", report.online.as_secs_f64()),
        format!("{:e}", report.online_with_estimator.as_secs_f64()),
        format!("{:e}", report.sweep.as_secs_f64()),
        format!("{:.2}", report.speedup()),
        format!("{:.3}", report.speedup_with_estimator()),
    ])?;
    w.flush()?;
    log::info!(
        "bench: truth {:?}, online {:?} ({:.1}x), with estimator {:?} ({:.2}x)",
        report.truth,
        report.online,
        report.speedup(),
        report.online_with_estimator,
        report.speedup_with_estimator()
    );
    Ok(report)
}
