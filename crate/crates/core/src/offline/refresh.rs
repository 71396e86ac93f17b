//! Two-stage construction: EIM from truth fields, greedy, EIM rebuilt from the
//! reduced solutions on the full training set, greedy again.

use super::greedy::{greedy_build, GreedyHistory, GreedyOptions, SnapshotCache};
use super::RbModel;
use crate::eim::{eim_build, EimApproximation, NonlinearityField};
use crate::error::{ParamDisplay, Result};
use crate::online::{OnlineOptions, OnlineSystem};
use crate::par::{self, Execution};
use crate::truth::TruthProblem;

/// Iron reluctivity fields of the reduced solutions at `params`.
pub fn rb_nonlinearity_fields(
    model: &RbModel,
    params: &[Vec<f64>],
    opts: &OnlineOptions,
    exec: Execution,
) -> Result<Vec<NonlinearityField>> {
    par::map(exec, params, |p| {
        let sys = OnlineSystem::new(model, p)?;
        let sol = sys.solve(opts, None)?;
        Ok(NonlinearityField {
            parameter: p.clone(),
            values: sys.nonlinearity_field(&sol.coefficients),
        })
    })
    .into_iter()
    .collect()
}

/// Truth reluctivity fields at `params`; snapshots land in `cache`.
pub fn truth_nonlinearity_fields(
    problem: &TruthProblem,
    params: &[Vec<f64>],
    opts: &GreedyOptions,
    cache: &mut SnapshotCache,
) -> Result<Vec<NonlinearityField>> {
    let mut fields = Vec::with_capacity(params.len());
    for (p, r) in params.iter().zip(cache.solve_batch(problem, params, &opts.newton, opts.exec)) {
        if let Err(e) = r {
            log::warn!("EIM training snapshot at {} failed, skipped: {e}", ParamDisplay(p.clone()));
            continue;
        }
        let sol = cache.get(p).expect("cached after a successful solve");
        fields.push(NonlinearityField {
            parameter: p.clone(),
            values: problem.context(p)?.nonlinearity_field(&sol.values),
        });
    }
    Ok(fields)
}

#[derive(Clone, Debug)]
pub struct TwoStageOptions {
    /// Truth-solve parameters for the first EIM.
    pub eim_train: Vec<Vec<f64>>,
    pub train: Vec<Vec<f64>>,
    pub eps_eim: f64,
    pub m_max: usize,
    pub nu_lb_floor: f64,
    pub greedy: GreedyOptions,
}

#[derive(Clone, Debug)]
pub struct TwoStageResult {
    pub stage1_eim: EimApproximation,
    pub stage1_model: RbModel,
    pub stage1_history: GreedyHistory,
    pub stage2_eim: EimApproximation,
    pub model: RbModel,
    pub stage2_history: GreedyHistory,
}

/// Stage 1 interpolates truth fields on `eim_train` down to `eps_eim`; stage 2
/// interpolates the stage-1 reduced fields on `train` with `M_max` terms
/// (tolerance zero) and reruns the greedy from scratch. Snapshots are shared
/// through `cache`.
pub fn two_stage_build(problem: &TruthProblem, opts: &TwoStageOptions, cache: &mut SnapshotCache) -> Result<TwoStageResult> {
    let fields = truth_nonlinearity_fields(problem, &opts.eim_train, &opts.greedy, cache)?;
    let stage1_eim = eim_build(&fields, opts.eps_eim, opts.m_max);
    log::info!("stage-1 EIM: M = {}", stage1_eim.len());
    let (stage1_model, stage1_history) = greedy_build(
        problem,
        &opts.train,
        stage1_eim.clone(),
        opts.nu_lb_floor,
        &opts.greedy,
        cache,
    )?;
    let fields = rb_nonlinearity_fields(&stage1_model, &opts.train, &opts.greedy.online, opts.greedy.exec)?;
    let stage2_eim = eim_build(&fields, 0.0, opts.m_max);
    log::info!("stage-2 EIM: M = {}", stage2_eim.len());
    let (model, stage2_history) = greedy_build(
        problem,
        &opts.train,
        stage2_eim.clone(),
        opts.nu_lb_floor,
        &opts.greedy,
        cache,
    )?;
    Ok(TwoStageResult {
        stage1_eim,
        stage1_model,
        stage1_history,
        stage2_eim,
        model,
        stage2_history,
    })
}
