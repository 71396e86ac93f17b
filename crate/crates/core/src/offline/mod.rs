//! Offline stage: reduced-basis model, parameter-separable tensors, residual
//! Gram matrix, greedy construction and the two-stage EIM refresh.
//!
//! The reduced residual is expanded as `r(v; p) = Σ_q Φ_q(p) r_q(v)` with the
//! pieces ordered as
//!
//! * `Q_f` load pieces,
//! * for each basis function `ζ_n` a block of `M + 4·M·L1 + 4·L2` pieces:
//!   `M` pieces `∫_iron q_m ∇̂ζ_n·∇̂v` (coefficient `−u_n φ_m`), `4·M·L1` pieces
//!   `∫_d q_m ∂_iζ_n ∂_jv` (coefficient `−u_n φ_m (|det C_d| G_d,ij − δ_ij)`)
//!   and `4·L2` pieces `ν_d ∫_d ∂_iζ_n ∂_jv` (coefficient `−u_n |det C_d| G_d,ij`).
//!
//! The first two groups together reproduce `Σ_d Σ_ij |det C_d| G_d,ij ∫_d q_m ∂_iζ_n ∂_jv`.

mod greedy;
mod refresh;
mod riesz;
mod tensors;

use nalgebra::DMatrix;

use crate::eim::EimApproximation;
use crate::geometry::{AffineMapSet, MacroDecomposition};
use crate::material::ReluctivityModel;

pub use greedy::{
    gram_schmidt_insert, greedy_build, GreedyHistory, GreedyOptions, GreedyRound, InsertOutcome,
    SnapshotCache, StopReason, INSERT_DEFECT_TOL,
};
pub use refresh::{rb_nonlinearity_fields, truth_nonlinearity_fields, two_stage_build, TwoStageOptions, TwoStageResult};
pub use riesz::{residual_pieces, ModelBuilder};
pub use tensors::{basis_gradients, LoadKind, LoadPiece};

/// Self-contained reduced model: everything the online stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RbModel {
    pub geometry: MacroDecomposition,
    pub material: ReluctivityModel,
    /// Curve-certified lower bound of the reluctivity.
    pub nu_lb_floor: f64,
    /// Smallest iron reluctivity observed during offline estimator sweeps.
    pub nu_lb_observed: f64,
    /// X̂-orthonormal basis, one column per function (`𝒩 × N`).
    pub basis: DMatrix<f64>,
    pub parameters: Vec<Vec<f64>>,
    pub eim: EimApproximation,
    /// Iron macro-triangles (`L1` of them) and the others (`L2`).
    pub iron_macros: Vec<usize>,
    pub other_macros: Vec<usize>,
    /// `N × N` blocks `∫_d q_m ∂_iζ_n ∂_jζ_k` (row `k`), index `((m·L1 + l)·4 + 2i + j)`.
    pub nonlinear_blocks: Vec<DMatrix<f64>>,
    /// `N × N` blocks `ν_d ∫_d ∂_iζ_n ∂_jζ_k`, index `(l·4 + 2i + j)`.
    pub linear_blocks: Vec<DMatrix<f64>>,
    pub load_pieces: Vec<LoadPiece>,
    /// `f_q(ζ_k)`, `Q_f × N`.
    pub load_vectors: DMatrix<f64>,
    /// Macro-triangle of each magic point.
    pub magic_macro: Vec<usize>,
    /// Reference gradients of the basis at magic points, row `2m + c`.
    pub magic_gradients: DMatrix<f64>,
    /// Macro-triangle of each iron fine triangle.
    pub iron_macro: Vec<usize>,
    /// Reference gradients of the basis on all iron triangles, row `2k + c`.
    pub iron_gradients: DMatrix<f64>,
    /// Riesz Gram matrix of the residual pieces, `Q_r × Q_r`.
    pub gram: DMatrix<f64>,
}

impl RbModel {
    pub fn n(&self) -> usize {
        self.basis.ncols()
    }

    pub fn m(&self) -> usize {
        self.eim.len()
    }

    pub fn l1(&self) -> usize {
        self.iron_macros.len()
    }

    pub fn l2(&self) -> usize {
        self.other_macros.len()
    }

    pub fn q_f(&self) -> usize {
        self.load_pieces.len()
    }

    /// Residual pieces per basis function, `M + 4·M·L1 + 4·L2`.
    pub fn block_size(&self) -> usize {
        piece_block_size(self.m(), self.l1(), self.l2())
    }

    /// `Q_r = Q_f + N (M + 4·M·L1 + 4·L2)`.
    pub fn q_r(&self) -> usize {
        self.q_f() + self.n() * self.block_size()
    }

    /// Nested sub-model with the first `n` basis functions and `m` EIM terms.
    pub fn truncate(&self, n: usize, m: usize) -> RbModel {
        let n = n.min(self.n());
        let m = m.min(self.m());
        let (l1, l2) = (self.l1(), self.l2());
        let sub = |a: &DMatrix<f64>| a.view((0, 0), (n, n)).into_owned();
        let mut nonlinear_blocks = Vec::with_capacity(m * l1 * 4);
        for mm in 0..m {
            for l in 0..l1 {
                for ij in 0..4 {
                    nonlinear_blocks.push(sub(&self.nonlinear_blocks[(mm * l1 + l) * 4 + ij]));
                }
            }
        }
        let linear_blocks = self.linear_blocks.iter().map(sub).collect();
        let eim = self.eim.truncate(m);
        let old_block = self.block_size();
        let mut keep: Vec<usize> = (0..self.q_f()).collect();
        for nn in 0..n {
            let base = self.q_f() + nn * old_block;
            // reference pieces, perturbation pieces, linear pieces; m outermost
            keep.extend(base..base + m);
            keep.extend(base + self.m()..base + self.m() + 4 * m * l1);
            let lin = base + self.m() + 4 * self.m() * l1;
            keep.extend(lin..lin + 4 * l2);
        }
        let gram = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.gram[(keep[i], keep[j])]);
        RbModel {
            geometry: self.geometry.clone(),
            material: self.material.clone(),
            nu_lb_floor: self.nu_lb_floor,
            nu_lb_observed: self.nu_lb_observed,
            basis: self.basis.columns(0, n).into_owned(),
            parameters: self.parameters[..n].to_vec(),
            eim,
            iron_macros: self.iron_macros.clone(),
            other_macros: self.other_macros.clone(),
            nonlinear_blocks,
            linear_blocks,
            load_pieces: self.load_pieces.clone(),
            load_vectors: self.load_vectors.columns(0, n).into_owned(),
            magic_macro: self.magic_macro[..m].to_vec(),
            magic_gradients: self.magic_gradients.view((0, 0), (2 * m, n)).into_owned(),
            iron_macro: self.iron_macro.clone(),
            iron_gradients: self.iron_gradients.columns(0, n).into_owned(),
            gram,
        }
    }
}

pub fn piece_block_size(m: usize, l1: usize, l2: usize) -> usize {
    m + 4 * m * l1 + 4 * l2
}

/// Geometry factors `|det C_d| G_d,ij` for all macro-triangles, `[d][2i + j]`.
pub fn metric_factors(maps: &AffineMapSet) -> Vec<[f64; 4]> {
    maps.maps
        .iter()
        .map(|m| [m.metric(0, 0), m.metric(0, 1), m.metric(1, 0), m.metric(1, 1)])
        .collect()
}
