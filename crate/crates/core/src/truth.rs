//! Pulled-back quasilinear form, its derivative, the load, and the truth Newton
//! solver.
//!
//! On a fine triangle `T` inside macro-triangle `d` the form reads
//! `ν(s_T) |det C_d| |T| (∇̂w)ᵀ G_d ∇̂v` with `s_T² = (∇̂u)ᵀ G_d ∇̂u`, the squared
//! magnitude of the physical flux density.

use crate::error::{Error, Result};
use crate::fem::{generate_mesh, BoundaryMode, TruthSpace};
use crate::geometry::{build_affine_maps, AffineMap, AffineMapSet, MacroDecomposition};
use crate::linalg::{self, SpMat, SymmetricFactor};
use crate::material::{ReluctivityModel, SourceData};
use crate::par::Execution;

/// Below this flux magnitude the rank-one Jacobian term `ν1'(s)/s` is dropped.
pub const FLUX_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub struct TruthProblem {
    pub geometry: MacroDecomposition,
    pub space: TruthSpace,
    pub material: ReluctivityModel,
    pub sources: SourceData,
    /// Execution mode of per-triangle assembly loops.
    pub exec: Execution,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            max_halvings: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthSolution {
    pub parameter: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Residual norms, starting with the initial guess.
    pub history: Vec<f64>,
}

impl TruthProblem {
    pub fn new(
        geometry: MacroDecomposition,
        level: u32,
        mode: BoundaryMode,
        material: ReluctivityModel,
        sources: SourceData,
    ) -> Result<Self> {
        let mesh = generate_mesh(&geometry, level);
        let space = TruthSpace::new(mesh, mode)?;
        Ok(Self {
            geometry,
            space,
            material,
            sources,
            exec: Execution::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn context(&self, p: &[f64]) -> Result<AssemblyContext<'_>> {
        let maps = build_affine_maps(&self.geometry, p)?;
        Ok(AssemblyContext {
            problem: self,
            maps,
        })
    }

    pub fn newton_solve(
        &self,
        p: &[f64],
        opts: &NewtonOptions,
        initial: Option<&[f64]>,
    ) -> Result<TruthSolution> {
        let ctx = self.context(p)?;
        ctx.newton_solve(opts, initial)
    }
}

/// Parameter-dependent assembly data for one `p`.
pub struct AssemblyContext<'a> {
    pub problem: &'a TruthProblem,
    pub maps: AffineMapSet,
}

#[inline]
fn metric_apply(m: &AffineMap, g: [f64; 2]) -> [f64; 2] {
    [
        m.g[(0, 0)] * g[0] + m.g[(0, 1)] * g[1],
        m.g[(1, 0)] * g[0] + m.g[(1, 1)] * g[1],
    ]
}

#[inline]
fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl<'a> AssemblyContext<'a> {
    pub fn parameter(&self) -> &[f64] {
        &self.maps.parameter
    }

    #[inline]
    pub fn map_of(&self, t: usize) -> &AffineMap {
        &self.maps.maps[self.problem.space.mesh.macro_index[t]]
    }

    /// Physical flux magnitude `s_T = |C^{-T} ∇̂u|` on triangle `t`.
    #[inline]
    pub fn flux(&self, t: usize, u: &[f64]) -> f64 {
        let g = self.problem.space.gradient(t, u);
        dot2(g, metric_apply(self.map_of(t), g)).max(0.0).sqrt()
    }

    #[inline]
    fn coefficient(&self, t: usize, u: &[f64]) -> f64 {
        let mesh = &self.problem.space.mesh;
        if mesh.region[t].is_iron() {
            self.problem.material.evaluate(self.flux(t, u))
        } else {
            self.problem.material.region_value(mesh.region[t])
        }
    }

    fn stiffness(&self, t: usize, nu: f64) -> [[f64; 3]; 3] {
        let mesh = &self.problem.space.mesh;
        let m = self.map_of(t);
        let w = nu * m.det * mesh.area[t];
        let gr = &mesh.gradients[t];
        let mut k = [[0.0; 3]; 3];
        for a in 0..3 {
            let ga = metric_apply(m, gr[a]);
            for b in 0..3 {
                k[a][b] = w * dot2(ga, gr[b]);
            }
        }
        k
    }

    /// `A(u)` with `A_ij = a[u](φ_j, φ_i; p)`.
    pub fn operator(&self, u: &[f64]) -> SpMat {
        self.problem
            .space
            .assemble_matrix(self.problem.exec, |t| self.stiffness(t, self.coefficient(t, u)))
    }

    /// Operator with prescribed reluctivity on iron triangles (indexed like
    /// `mesh.iron`) and region constants elsewhere.
    pub fn operator_with_iron_values(&self, iron_values: &[f64]) -> SpMat {
        let mesh = &self.problem.space.mesh;
        let mut value = vec![0.0; mesh.len()];
        for (k, &t) in mesh.iron.iter().enumerate() {
            value[t] = iron_values[k];
        }
        self.problem.space.assemble_matrix(self.problem.exec, |t| {
            let nu = if mesh.region[t].is_iron() {
                value[t]
            } else {
                self.problem.material.region_value(mesh.region[t])
            };
            self.stiffness(t, nu)
        })
    }

    /// Derivative of `u ↦ A(u)u`.
    pub fn jacobian(&self, u: &[f64]) -> SpMat {
        let space = &self.problem.space;
        let mesh = &space.mesh;
        let material = &self.problem.material;
        space.assemble_matrix(self.problem.exec, |t| {
            if !mesh.region[t].is_iron() {
                return self.stiffness(t, material.region_value(mesh.region[t]));
            }
            let m = self.map_of(t);
            let g = space.gradient(t, u);
            let gg = metric_apply(m, g);
            let s = dot2(g, gg).max(0.0).sqrt();
            let (nu, dnu) = material.evaluate_with_derivative(s);
            let mut k = self.stiffness(t, nu);
            if s >= FLUX_FLOOR && dnu != 0.0 {
                let w = dnu / s * m.det * mesh.area[t];
                let proj = mesh.gradients[t].map(|ga| dot2(gg, ga));
                for a in 0..3 {
                    for b in 0..3 {
                        k[a][b] += w * proj[a] * proj[b];
                    }
                }
            }
            k
        })
    }

    /// `A(u)u` assembled element by element.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let space = &self.problem.space;
        let mesh = &space.mesh;
        space.assemble_vector(self.problem.exec, |t| {
            let m = self.map_of(t);
            let g = space.gradient(t, u);
            let gg = metric_apply(m, g);
            let nu = if mesh.region[t].is_iron() {
                self.problem.material.evaluate(dot2(g, gg).max(0.0).sqrt())
            } else {
                self.problem.material.region_value(mesh.region[t])
            };
            let w = nu * m.det * mesh.area[t];
            mesh.gradients[t].map(|ga| w * dot2(gg, ga))
        })
    }

    /// Load `F_i = ∫ J φ_i + ∫ (H_1 ∂φ_i/∂x_2 − H_2 ∂φ_i/∂x_1)` on the physical
    /// domain, pulled back.
    pub fn load(&self) -> Vec<f64> {
        let space = &self.problem.space;
        let mesh = &space.mesh;
        let sources = &self.problem.sources;
        space.assemble_vector(self.problem.exec, |t| {
            let region = mesh.region[t];
            let j = sources.current.get(region);
            let h = sources.magnet_field.get(region);
            let mut out = [0.0; 3];
            if j == 0.0 && h == [0.0, 0.0] {
                return out;
            }
            let m = self.map_of(t);
            let w = m.det * mesh.area[t];
            for a in 0..3 {
                let gr = mesh.gradients[t][a];
                let dx1 = m.c_inv_t[(0, 0)] * gr[0] + m.c_inv_t[(0, 1)] * gr[1];
                let dx2 = m.c_inv_t[(1, 0)] * gr[0] + m.c_inv_t[(1, 1)] * gr[1];
                out[a] = w * (j / 3.0 + h[0] * dx2 - h[1] * dx1);
            }
            out
        })
    }

    /// `F − A(u)u`.
    pub fn residual(&self, load: &[f64], u: &[f64]) -> Vec<f64> {
        let au = self.apply(u);
        load.iter().zip(&au).map(|(f, a)| f - a).collect()
    }

    /// Inner product of `X(p)` expressed in reference coefficients.
    pub fn physical_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let space = &self.problem.space;
        let mesh = &space.mesh;
        (0..mesh.len())
            .map(|t| {
                let m = self.map_of(t);
                let ga = space.gradient(t, a);
                let gb = space.gradient(t, b);
                m.det * mesh.area[t] * dot2(metric_apply(m, ga), gb)
            })
            .sum()
    }

    /// `ν1(s_T)` at every iron barycenter, ordered like `mesh.iron`.
    pub fn nonlinearity_field(&self, u: &[f64]) -> Vec<f64> {
        let mesh = &self.problem.space.mesh;
        mesh.iron
            .iter()
            .map(|&t| self.problem.material.evaluate(self.flux(t, u)))
            .collect()
    }

    /// Largest flux magnitude over iron triangles.
    pub fn max_iron_flux(&self, u: &[f64]) -> f64 {
        let mesh = &self.problem.space.mesh;
        mesh.iron.iter().map(|&t| self.flux(t, u)).fold(0.0, f64::max)
    }

    /// Damped Newton iteration on `A(u)u = F`. At least one step is taken.
    pub fn newton_solve(&self, opts: &NewtonOptions, initial: Option<&[f64]>) -> Result<TruthSolution> {
        let n = self.problem.dim();
        let load = self.load();
        let mut u = match initial {
            Some(u0) => {
                if u0.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: u0.len(),
                    });
                }
                u0.to_vec()
            }
            None => vec![0.0; n],
        };
        let mut r = self.residual(&load, &u);
        let mut rnorm = linalg::norm2(&r);
        let mut history = vec![rnorm];
        for it in 1..=opts.max_iter {
            let jac = self.jacobian(&u);
            let delta = SymmetricFactor::new(&jac)?.solve(&r)?;
            let mut step = 1.0;
            let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x + step * d).collect();
                let rt = self.residual(&load, &trial);
                let nt = linalg::norm2(&rt);
                let better = best.as_ref().is_none_or(|b| nt < b.2);
                if better {
                    best = Some((trial, rt, nt));
                }
                if nt < rnorm || nt <= opts.tol {
                    break;
                }
                step *= 0.5;
            }
            let (trial, rt, nt) = best.expect("at least one trial");
            u = trial;
            r = rt;
            rnorm = nt;
            history.push(rnorm);
            if !rnorm.is_finite() {
                break;
            }
            if rnorm <= opts.tol {
                return Ok(TruthSolution {
                    parameter: self.maps.parameter.clone(),
                    values: u,
                    iterations: it,
                    residual: rnorm,
                    history,
                });
            }
        }
        Err(Error::NewtonDiverged {
            iterations: history.len() - 1,
            history,
            last_iterate: u,
        })
    }
}
