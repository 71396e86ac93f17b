//! Weak-greedy basis construction driven by the online error estimator.

use std::collections::HashMap;

use super::riesz::ModelBuilder;
use super::RbModel;
use crate::eim::EimApproximation;
use crate::error::{Error, ParamDisplay, Result};
use crate::fem::TruthSpace;
use crate::linalg;
use crate::online::{solve_and_estimate_batch, OnlineOptions};
use crate::par::{self, Execution};
use crate::truth::{NewtonOptions, TruthProblem, TruthSolution};

/// Projection defects at or below this fraction of the snapshot norm count as
/// "already in the span".
pub const INSERT_DEFECT_TOL: f64 = 1e-10;

/// Truth snapshots keyed by the exact bit pattern of the parameter.
#[derive(Clone, Debug, Default)]
pub struct SnapshotCache {
    entries: HashMap<Vec<u64>, TruthSolution>,
}

fn key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|x| x.to_bits()).collect()
}

impl SnapshotCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, p: &[f64]) -> Option<&TruthSolution> {
        self.entries.get(&key(p))
    }

    pub fn insert(&mut self, solution: TruthSolution) {
        self.entries.insert(key(&solution.parameter), solution);
    }

    /// Cached snapshot at `p`, solving it first if needed.
    pub fn solve(&mut self, problem: &TruthProblem, p: &[f64], opts: &NewtonOptions) -> Result<&TruthSolution> {
        let k = key(p);
        if !self.entries.contains_key(&k) {
            let sol = problem.newton_solve(p, opts, None)?;
            self.entries.insert(k.clone(), sol);
        }
        Ok(&self.entries[&k])
    }

    /// Fills the cache for all `params` (in parallel when requested); failures
    /// are returned per parameter and not cached.
    pub fn solve_batch(
        &mut self,
        problem: &TruthProblem,
        params: &[Vec<f64>],
        opts: &NewtonOptions,
        exec: Execution,
    ) -> Vec<Result<()>> {
        let missing: Vec<Vec<f64>> = params.iter().filter(|p| self.get(p).is_none()).cloned().collect();
        let solved = par::map(exec, &missing, |p| problem.newton_solve(p, opts, None));
        let mut failed = HashMap::new();
        for (p, r) in missing.iter().zip(solved) {
            match r {
                Ok(s) => self.insert(s),
                Err(e) => {
                    failed.insert(key(p), e);
                }
            }
        }
        params
            .iter()
            .map(|p| failed.remove(&key(p)).map_or(Ok(()), Err))
            .collect()
    }

    pub fn solutions(&self) -> impl Iterator<Item = &TruthSolution> {
        self.entries.values()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InsertOutcome {
    /// Orthonormalized function to append.
    Inserted(Vec<f64>),
    /// Relative projection defect too small to extend the basis.
    Rejected { defect: f64 },
}

/// Orthonormalizes `snapshot` against `basis` in the X̂ inner product with two
/// classical Gram–Schmidt passes.
pub fn gram_schmidt_insert(space: &TruthSpace, basis: &[Vec<f64>], snapshot: &[f64]) -> InsertOutcome {
    let gram = space.gram();
    let norm = |v: &[f64]| linalg::bilinear(gram, v, v).max(0.0).sqrt();
    let original = norm(snapshot);
    if original == 0.0 || !original.is_finite() {
        return InsertOutcome::Rejected { defect: 0.0 };
    }
    let mut v = snapshot.to_vec();
    for _ in 0..2 {
        let kv = linalg::mul_vec(gram, &v);
        let coeffs: Vec<f64> = basis.iter().map(|z| linalg::dot(z, &kv)).collect();
        for (z, c) in basis.iter().zip(&coeffs) {
            for (x, zi) in v.iter_mut().zip(z) {
                *x -= c * zi;
            }
        }
    }
    let defect = norm(&v) / original;
    if defect <= INSERT_DEFECT_TOL {
        return InsertOutcome::Rejected { defect };
    }
    let scale = norm(&v);
    v.iter_mut().for_each(|x| *x /= scale);
    InsertOutcome::Inserted(v)
}

#[derive(Clone, Debug)]
pub struct GreedyOptions {
    pub eps_rb: f64,
    pub n_max: usize,
    pub online: OnlineOptions,
    pub newton: NewtonOptions,
    pub exec: Execution,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            eps_rb: 1e-2,
            n_max: 12,
            online: OnlineOptions::default(),
            newton: NewtonOptions::default(),
            exec: Execution::default(),
        }
    }
}

/// Estimator sweep over the training set with the basis of size `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyRound {
    pub n: usize,
    pub m: usize,
    pub max_delta: f64,
    pub max_delta_rb: f64,
    pub max_delta_eim: f64,
    /// Largest EIM error `δ_M` over the training set.
    pub max_eim_error: f64,
    pub argmax: usize,
    /// Parameter whose snapshot was added after this sweep, if any.
    pub selected: Option<Vec<f64>>,
    /// Training indices skipped because their snapshot solve failed.
    pub skipped: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    MaxSize,
    /// The selected snapshot was already in the span.
    Stagnation,
    /// Every candidate snapshot failed to converge.
    NoSnapshot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyHistory {
    pub rounds: Vec<GreedyRound>,
    pub stop: StopReason,
}

impl GreedyHistory {
    /// `max Δ` after the last sweep.
    pub fn final_max_delta(&self) -> f64 {
        self.rounds.last().map_or(f64::INFINITY, |r| r.max_delta)
    }
}

/// Training indices ordered by distance to the box midpoint (box-normalized),
/// smallest index first on ties.
fn by_distance_to_midpoint(problem: &TruthProblem, train: &[Vec<f64>]) -> Vec<usize> {
    let b = &problem.geometry.parameter_box;
    let mid = b.midpoint();
    let dist = |p: &[f64]| -> f64 {
        p.iter()
            .zip(&mid)
            .zip(b.lower.iter().zip(&b.upper))
            .map(|((x, c), (lo, hi))| ((x - c) / (hi - lo)).powi(2))
            .sum()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &c| dist(&train[a]).total_cmp(&dist(&train[c])).then(a.cmp(&c)));
    order
}

/// Tries candidates in order until one snapshot converges and extends the
/// basis. Returns the accepted index, or the stop reason.
fn add_first_viable(
    builder: &mut ModelBuilder<'_>,
    problem: &TruthProblem,
    train: &[Vec<f64>],
    candidates: &[usize],
    opts: &GreedyOptions,
    cache: &mut SnapshotCache,
    skipped: &mut Vec<usize>,
) -> Result<std::result::Result<usize, StopReason>> {
    for &i in candidates {
        let p = &train[i];
        let snap = match cache.solve(problem, p, &opts.newton) {
            Ok(s) => s.values.clone(),
            Err(e) => {
                log::warn!("snapshot at {} failed, skipping: {e}", ParamDisplay(p.clone()));
                skipped.push(i);
                continue;
            }
        };
        return match gram_schmidt_insert(&problem.space, builder.basis(), &snap) {
            InsertOutcome::Inserted(z) => {
                builder.push(z, p.clone())?;
                Ok(Ok(i))
            }
            InsertOutcome::Rejected { defect } => {
                log::info!(
                    "snapshot at {} already in the span (defect {defect:e})",
                    ParamDisplay(p.clone())
                );
                Ok(Err(StopReason::Stagnation))
            }
        };
    }
    Ok(Err(StopReason::NoSnapshot))
}

/// Weak greedy over `train`: starts at the training point nearest the box
/// midpoint and keeps adding the snapshot with the largest estimator.
pub fn greedy_build(
    problem: &TruthProblem,
    train: &[Vec<f64>],
    eim: EimApproximation,
    nu_lb_floor: f64,
    opts: &GreedyOptions,
    cache: &mut SnapshotCache,
) -> Result<(RbModel, GreedyHistory)> {
    if train.is_empty() {
        return Err(Error::InvalidBox("greedy needs a nonempty training set".into()));
    }
    let mut builder = ModelBuilder::with_execution(problem, eim, nu_lb_floor, opts.exec)?;
    let mut rounds = Vec::new();
    let mut skipped = Vec::new();
    let order = by_distance_to_midpoint(problem, train);
    if let Err(reason) = add_first_viable(&mut builder, problem, train, &order, opts, cache, &mut skipped)? {
        return Err(Error::Singular(format!("no initial snapshot could be added ({reason:?})")));
    }
    let stop = loop {
        let model = builder.model();
        let results = solve_and_estimate_batch(model, train, &opts.online, opts.exec);
        let mut deltas = Vec::with_capacity(train.len());
        let mut round = GreedyRound {
            n: model.n(),
            m: model.m(),
            max_delta: 0.0,
            max_delta_rb: 0.0,
            max_delta_eim: 0.0,
            max_eim_error: 0.0,
            argmax: 0,
            selected: None,
            skipped: std::mem::take(&mut skipped),
        };
        let mut lowest_nu = f64::INFINITY;
        for (i, r) in results.into_iter().enumerate() {
            let (_, cert) = r.map_err(|e| {
                Error::Singular(format!(
                    "estimator failed at {} with N = {}: {e}",
                    ParamDisplay(train[i].clone()),
                    round.n
                ))
            })?;
            if cert.delta > round.max_delta {
                round.max_delta = cert.delta;
                round.argmax = i;
            }
            round.max_delta_rb = round.max_delta_rb.max(cert.delta_rb);
            round.max_delta_eim = round.max_delta_eim.max(cert.delta_eim);
            round.max_eim_error = round.max_eim_error.max(cert.eim_error);
            lowest_nu = lowest_nu.min(cert.min_iron_nu);
            deltas.push(cert.delta);
        }
        builder.observe_nu(lowest_nu);
        log::info!(
            "greedy N = {}: max estimator {:.3e} at {}",
            round.n,
            round.max_delta,
            ParamDisplay(train[round.argmax].clone())
        );
        let n = round.n;
        rounds.push(round);
        if rounds.last().unwrap().max_delta <= opts.eps_rb {
            break StopReason::Tolerance;
        }
        if n >= opts.n_max {
            break StopReason::MaxSize;
        }
        let mut candidates: Vec<usize> = (0..train.len()).collect();
        candidates.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]).then(a.cmp(&b)));
        match add_first_viable(&mut builder, problem, train, &candidates, opts, cache, &mut skipped)? {
            Ok(i) => rounds.last_mut().unwrap().selected = Some(train[i].clone()),
            Err(reason) => break reason,
        }
    };
    if let Some(last) = rounds.last_mut() {
        last.skipped.append(&mut skipped);
    }
    Ok((builder.into_model(), GreedyHistory { rounds, stop }))
}
