//! Online stage: reduced Newton solve and a-posteriori error certificate.
//!
//! All work is independent of the truth dimension except the EIM error sweep
//! over the iron barycenters.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{build_affine_maps, geometric_constants, AffineMapSet};
use crate::linalg::add_scaled;
use crate::offline::{metric_factors, RbModel};
use crate::par::{self, Execution};
use crate::truth::FLUX_FLOOR;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    /// Exact derivative including the EIM coefficient sensitivity.
    Full,
    /// Only the frozen-coefficient operator `A(φ(u))`.
    Picard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NuLbMode {
    /// Lower bound certified from the reluctivity curve.
    CertifiedFloor,
    /// Smallest iron reluctivity observed offline and in the current sweep,
    /// never below the certified floor.
    Heuristic,
}

impl NuLbMode {
    pub fn name(self) -> &'static str {
        match self {
            NuLbMode::CertifiedFloor => "floor",
            NuLbMode::Heuristic => "heuristic",
        }
    }
}

impl JacobianMode {
    pub fn name(self) -> &'static str {
        match self {
            JacobianMode::Full => "full",
            JacobianMode::Picard => "picard",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub jacobian: JacobianMode,
    pub nu_lb: NuLbMode,
    /// When false the EIM sweep is skipped and the certificate only carries
    /// the residual part (not certified).
    pub eim_error: bool,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 50,
            max_halvings: 20,
            jacobian: JacobianMode::Picard,
            nu_lb: NuLbMode::Heuristic,
            eim_error: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolution {
    pub parameter: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// EIM coefficients at the converged state.
    pub phi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub jacobian: JacobianMode,
    pub solve_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorCertificate {
    pub delta: f64,
    pub delta_rb: f64,
    pub delta_eim: f64,
    pub dual_norm: f64,
    pub eim_error: f64,
    pub solution_norm: f64,
    pub c1: f64,
    pub c2: f64,
    pub nu_lb: f64,
    pub nu_lb_mode: NuLbMode,
    /// False when the EIM sweep was skipped.
    pub certified: bool,
    /// Smallest iron reluctivity seen in the sweep.
    pub min_iron_nu: f64,
    pub estimator_time: Duration,
    pub sweep_time: Duration,
}

/// Reduced operators assembled for one parameter.
pub struct OnlineSystem<'m> {
    pub model: &'m RbModel,
    pub maps: AffineMapSet,
    metric: Vec<[f64; 4]>,
    /// `C_m = Σ_d Σ_ij |det C_d| G_d,ij A_{m,d}^{ij}`.
    nonlinear: Vec<DMatrix<f64>>,
    linear: DMatrix<f64>,
    load: DVector<f64>,
}

impl<'m> OnlineSystem<'m> {
    pub fn new(model: &'m RbModel, p: &[f64]) -> Result<Self> {
        let maps = build_affine_maps(&model.geometry, p)?;
        let metric = metric_factors(&maps);
        let n = model.n();
        let l1 = model.l1();
        let mut nonlinear = Vec::with_capacity(model.m());
        for m in 0..model.m() {
            let mut c = DMatrix::zeros(n, n);
            for (l, &d) in model.iron_macros.iter().enumerate() {
                for ij in 0..4 {
                    add_scaled(&mut c, metric[d][ij], &model.nonlinear_blocks[(m * l1 + l) * 4 + ij]);
                }
            }
            nonlinear.push(c);
        }
        let mut linear = DMatrix::zeros(n, n);
        for (l, &d) in model.other_macros.iter().enumerate() {
            for ij in 0..4 {
                add_scaled(&mut linear, metric[d][ij], &model.linear_blocks[l * 4 + ij]);
            }
        }
        let mut load = DVector::zeros(n);
        for (q, piece) in model.load_pieces.iter().enumerate() {
            let f = piece.factor(&maps);
            for k in 0..n {
                load[k] += f * model.load_vectors[(q, k)];
            }
        }
        Ok(Self {
            model,
            maps,
            metric,
            nonlinear,
            linear,
            load,
        })
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    /// Flux magnitude and metric-weighted gradient at magic point `m`.
    fn magic_flux(&self, m: usize, u: &[f64]) -> (f64, [f64; 2]) {
        let model = self.model;
        let (mut gx, mut gy) = (0.0, 0.0);
        for (n, un) in u.iter().enumerate() {
            gx += un * model.magic_gradients[(2 * m, n)];
            gy += un * model.magic_gradients[(2 * m + 1, n)];
        }
        let g = &self.maps.maps[model.magic_macro[m]].g;
        let gg = [g[(0, 0)] * gx + g[(0, 1)] * gy, g[(1, 0)] * gx + g[(1, 1)] * gy];
        ((gx * gg[0] + gy * gg[1]).max(0.0).sqrt(), gg)
    }

    /// EIM coefficients `φ = B^{-1} ν(u at magic points)`.
    pub fn eim_coefficients(&self, u: &[f64]) -> Vec<f64> {
        let values: Vec<f64> = (0..self.model.m())
            .map(|m| self.model.material.evaluate(self.magic_flux(m, u).0))
            .collect();
        self.model.eim.coefficients(&values)
    }

    /// Reduced operator `A(φ) = Σ_m φ_m C_m + A_lin`.
    pub fn operator(&self, phi: &[f64]) -> DMatrix<f64> {
        let mut a = self.linear.clone();
        for (c, p) in self.nonlinear.iter().zip(phi) {
            add_scaled(&mut a, *p, c);
        }
        a
    }

    fn residual(&self, u: &[f64], phi: &[f64]) -> DVector<f64> {
        let a = self.operator(phi);
        &self.load - a * DVector::from_column_slice(u)
    }

    fn full_jacobian(&self, u: &[f64], phi: &[f64]) -> DMatrix<f64> {
        let model = self.model;
        let (n, m) = (model.n(), model.m());
        let mut jac = self.operator(phi);
        // sensitivity of the magic-point values: row m, column n
        let mut dnu = DMatrix::zeros(m, n);
        for mm in 0..m {
            let (s, gg) = self.magic_flux(mm, u);
            let d = model.material.evaluate_derivative(s);
            if s >= FLUX_FLOOR && d != 0.0 {
                for k in 0..n {
                    let dir = gg[0] * model.magic_gradients[(2 * mm, k)]
                        + gg[1] * model.magic_gradients[(2 * mm + 1, k)];
                    dnu[(mm, k)] = d / s * dir;
                }
            }
        }
        let mut dphi = DMatrix::zeros(m, n);
        for k in 0..n {
            let col: Vec<f64> = dnu.column(k).iter().copied().collect();
            let sol = model.eim.coefficients(&col);
            for mm in 0..m {
                dphi[(mm, k)] = sol[mm];
            }
        }
        let uvec = DVector::from_column_slice(u);
        for (mm, c) in self.nonlinear.iter().enumerate() {
            let cu = c * &uvec;
            jac.ger(1.0, &cu, &dphi.row(mm).transpose(), 1.0);
        }
        jac
    }

    /// Damped Newton on `A(φ(u)) u = F` starting from `initial` (zero by default).
    pub fn solve(&self, opts: &OnlineOptions, initial: Option<&[f64]>) -> Result<ReducedSolution> {
        let start = Instant::now();
        let n = self.model.n();
        if n == 0 {
            return Err(Error::EmptyModel);
        }
        let mut u = initial.map_or_else(|| vec![0.0; n], |x| x.to_vec());
        let mut phi = self.eim_coefficients(&u);
        let mut r = self.residual(&u, &phi);
        let mut rnorm = r.norm();
        let mut history = vec![rnorm];
        for it in 1..=opts.max_iter {
            let jac = match opts.jacobian {
                JacobianMode::Picard => self.operator(&phi),
                JacobianMode::Full => self.full_jacobian(&u, &phi),
            };
            let delta = jac
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Singular("reduced Jacobian is singular".into()))?;
            let mut step = 1.0;
            let mut best: Option<(Vec<f64>, Vec<f64>, DVector<f64>, f64)> = None;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(x, d)| x + step * d).collect();
                let tphi = self.eim_coefficients(&trial);
                let tr = self.residual(&trial, &tphi);
                let tn = tr.norm();
                if best.as_ref().is_none_or(|b| tn < b.3) {
                    best = Some((trial, tphi, tr, tn));
                }
                if tn < rnorm || tn <= opts.tol {
                    break;
                }
                step *= 0.5;
            }
            let (bu, bphi, br, bn) = best.expect("at least one trial");
            u = bu;
            phi = bphi;
            r = br;
            rnorm = bn;
            history.push(rnorm);
            if !rnorm.is_finite() {
                break;
            }
            if rnorm <= opts.tol {
                return Ok(ReducedSolution {
                    parameter: self.maps.parameter.clone(),
                    coefficients: u,
                    phi,
                    iterations: it,
                    residual: rnorm,
                    history,
                    jacobian: opts.jacobian,
                    solve_time: start.elapsed(),
                });
            }
        }
        Err(Error::NewtonDiverged {
            iterations: history.len() - 1,
            history,
            last_iterate: u,
        })
    }

    /// Coefficients `Φ^r(p)` of the residual expansion for state `u`.
    pub fn residual_coefficients(&self, u: &[f64], phi: &[f64]) -> Vec<f64> {
        let model = self.model;
        let (m, l1) = (model.m(), model.l1());
        let p = model.block_size();
        let mut out = vec![0.0; model.q_f() + u.len() * p];
        for (q, piece) in model.load_pieces.iter().enumerate() {
            out[q] = piece.factor(&self.maps);
        }
        for (n, un) in u.iter().enumerate() {
            let base = model.q_f() + n * p;
            for mm in 0..m {
                let c = -un * phi[mm];
                out[base + mm] = c;
                for (l, &d) in model.iron_macros.iter().enumerate() {
                    for ij in 0..4 {
                        let delta = if ij == 0 || ij == 3 { 1.0 } else { 0.0 };
                        out[base + m + (mm * l1 + l) * 4 + ij] = c * (self.metric[d][ij] - delta);
                    }
                }
            }
            let lin = base + m + 4 * m * l1;
            for (l, &d) in model.other_macros.iter().enumerate() {
                for ij in 0..4 {
                    out[lin + l * 4 + ij] = -un * self.metric[d][ij];
                }
            }
        }
        out
    }

    /// Flux magnitude on iron triangle `k` (position in the iron list).
    fn iron_flux(&self, k: usize, u: &[f64]) -> f64 {
        let model = self.model;
        let (mut gx, mut gy) = (0.0, 0.0);
        for (n, un) in u.iter().enumerate() {
            gx += un * model.iron_gradients[(2 * k, n)];
            gy += un * model.iron_gradients[(2 * k + 1, n)];
        }
        let g = &self.maps.maps[model.iron_macro[k]].g;
        let s2 = gx * (g[(0, 0)] * gx + g[(0, 1)] * gy) + gy * (g[(1, 0)] * gx + g[(1, 1)] * gy);
        s2.max(0.0).sqrt()
    }

    /// `ν1` of the lifted reduced state at every iron barycenter.
    pub fn nonlinearity_field(&self, u: &[f64]) -> Vec<f64> {
        (0..self.model.iron_macro.len())
            .map(|k| self.model.material.evaluate(self.iron_flux(k, u)))
            .collect()
    }

    /// EIM error `δ_M` over all iron barycenters and the smallest reluctivity seen.
    pub fn eim_sweep(&self, u: &[f64], phi: &[f64]) -> (f64, f64) {
        let model = self.model;
        let mut delta = 0.0f64;
        let mut lowest = f64::INFINITY;
        for k in 0..model.iron_macro.len() {
            let nu = model.material.evaluate(self.iron_flux(k, u));
            let mut interp = 0.0;
            for (c, q) in phi.iter().zip(&model.eim.basis) {
                interp += c * q[k];
            }
            delta = delta.max((nu - interp).abs());
            lowest = lowest.min(nu);
        }
        (delta, lowest)
    }
}

/// Squared dual norm `Φᵀ G Φ` for each column of `phis`, with the consistency
/// check against round-off scale.
fn dual_norms(gram: &DMatrix<f64>, phis: &DMatrix<f64>) -> Result<Vec<f64>> {
    let w = gram * phis;
    let diag: Vec<f64> = (0..gram.nrows()).map(|q| gram[(q, q)].max(0.0).sqrt()).collect();
    let mut out = Vec::with_capacity(phis.ncols());
    for b in 0..phis.ncols() {
        let col = phis.column(b);
        let value = col.dot(&w.column(b));
        let scale: f64 = col.iter().zip(&diag).map(|(c, d)| c.abs() * d).sum::<f64>().powi(2);
        if value < -1e-12 * scale {
            return Err(Error::GramInconsistent { value, scale });
        }
        out.push(value.max(0.0).sqrt());
    }
    Ok(out)
}

struct Partial {
    solution: ReducedSolution,
    phi_r: Vec<f64>,
    sweep: Option<(f64, f64)>,
    c1: f64,
    c2: f64,
    sweep_time: Duration,
    start: Instant,
}

fn partial(model: &RbModel, p: &[f64], opts: &OnlineOptions) -> Result<Partial> {
    let sys = OnlineSystem::new(model, p)?;
    let solution = sys.solve(opts, None)?;
    let start = Instant::now();
    Ok(finish_partial(&sys, solution, opts, start))
}

fn finish_partial(sys: &OnlineSystem<'_>, solution: ReducedSolution, opts: &OnlineOptions, start: Instant) -> Partial {
    let phi_r = sys.residual_coefficients(&solution.coefficients, &solution.phi);
    let sweep_start = Instant::now();
    let sweep = opts
        .eim_error
        .then(|| sys.eim_sweep(&solution.coefficients, &solution.phi));
    let sweep_time = sweep_start.elapsed();
    let (c1, c2) = geometric_constants(&sys.maps);
    Partial {
        solution,
        phi_r,
        sweep,
        c1,
        c2,
        sweep_time,
        start,
    }
}

fn certificate(model: &RbModel, part: &Partial, dual: f64, opts: &OnlineOptions) -> ErrorCertificate {
    let (eim_error, min_nu) = part.sweep.unwrap_or((0.0, f64::INFINITY));
    let nu_lb = match opts.nu_lb {
        NuLbMode::CertifiedFloor => model.nu_lb_floor,
        NuLbMode::Heuristic => model.nu_lb_floor.max(model.nu_lb_observed.min(min_nu)),
    };
    let u_norm = part
        .solution
        .coefficients
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let denom = nu_lb * part.c1;
    let delta_rb = dual / denom;
    let delta_eim = part.c2 * eim_error * u_norm / denom;
    ErrorCertificate {
        delta: delta_rb + delta_eim,
        delta_rb,
        delta_eim,
        dual_norm: dual,
        eim_error,
        solution_norm: u_norm,
        c1: part.c1,
        c2: part.c2,
        nu_lb,
        nu_lb_mode: opts.nu_lb,
        certified: part.sweep.is_some(),
        min_iron_nu: min_nu,
        estimator_time: part.start.elapsed(),
        sweep_time: part.sweep_time,
    }
}

pub fn reduced_newton(model: &RbModel, p: &[f64], opts: &OnlineOptions) -> Result<ReducedSolution> {
    OnlineSystem::new(model, p)?.solve(opts, None)
}

/// Certificate `Δ = Δ^RB + Δ^EIM` for a converged reduced solution.
pub fn estimate_error(model: &RbModel, solution: &ReducedSolution, opts: &OnlineOptions) -> Result<ErrorCertificate> {
    let start = Instant::now();
    let sys = OnlineSystem::new(model, &solution.parameter)?;
    let part = finish_partial(&sys, solution.clone(), opts, start);
    let phis = DMatrix::from_column_slice(part.phi_r.len(), 1, &part.phi_r);
    let dual = dual_norms(&model.gram, &phis)?[0];
    Ok(certificate(model, &part, dual, opts))
}

/// Solves and certifies a batch of parameters; the dual norms of all
/// parameters are evaluated with one matrix product.
pub fn solve_and_estimate_batch(
    model: &RbModel,
    params: &[Vec<f64>],
    opts: &OnlineOptions,
    exec: Execution,
) -> Vec<Result<(ReducedSolution, ErrorCertificate)>> {
    let parts = par::map(exec, params, |p| partial(model, p, opts));
    let ok: Vec<&Partial> = parts.iter().filter_map(|r| r.as_ref().ok()).collect();
    let q = model.q_r();
    let mut phis = DMatrix::zeros(q, ok.len());
    for (b, part) in ok.iter().enumerate() {
        phis.set_column(b, &DVector::from_column_slice(&part.phi_r));
    }
    let duals = match exec {
        Execution::Sequential => dual_norms(&model.gram, &phis),
        Execution::Parallel => {
            // split columns into chunks so the products run concurrently
            let chunk = ok.len().div_ceil(8).max(1);
            let starts: Vec<usize> = (0..ok.len()).step_by(chunk).collect();
            let pieces = par::map(exec, &starts, |&s| {
                let w = chunk.min(ok.len() - s);
                dual_norms(&model.gram, &phis.columns(s, w).into_owned())
            });
            pieces
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().flatten().collect())
        }
    };
    let mut duals = match duals {
        Ok(d) => d.into_iter(),
        Err(e) => {
            let msg = e.to_string();
            return params
                .iter()
                .map(|_| Err(Error::Corrupt(msg.clone())))
                .collect();
        }
    };
    parts
        .into_iter()
        .map(|r| {
            r.map(|part| {
                let dual = duals.next().expect("one dual norm per solved parameter");
                let cert = certificate(model, &part, dual, opts);
                (part.solution, cert)
            })
        })
        .collect()
}

/// Truth-length coefficients `Σ_n u_n ζ_n`.
pub fn lift(model: &RbModel, solution: &ReducedSolution) -> Vec<f64> {
    lift_coefficients(model, &solution.coefficients)
}

pub fn lift_coefficients(model: &RbModel, coefficients: &[f64]) -> Vec<f64> {
    let u = DVector::from_column_slice(coefficients);
    (&model.basis * u).iter().copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Effectivity {
    Ratio(f64),
    /// True error below `1e-14`: the ratio is meaningless.
    ExactWithinPrecision,
}

pub fn effectivity(cert: &ErrorCertificate, true_error: f64) -> Effectivity {
    if true_error < 1e-14 {
        Effectivity::ExactWithinPrecision
    } else {
        Effectivity::Ratio(cert.delta / true_error)
    }
}
