//! Parameter-independent reduced blocks and load pieces.

use nalgebra::DMatrix;

use crate::eim::EimApproximation;
use crate::fem::TruthSpace;
use crate::geometry::AffineMapSet;
use crate::linalg::add_scaled;
use crate::truth::TruthProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadKind {
    /// `J ∫_d v`, geometry factor `|det C_d|`.
    Current,
    /// `H_k ∫_d ∂v/∂x̂_i` for magnet field component `k` and reference
    /// direction `i`.
    Field { component: usize, direction: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadPiece {
    pub macro_index: usize,
    pub kind: LoadKind,
    /// Source value folded into the piece (`J` or `H_k`).
    pub value: f64,
}

impl LoadPiece {
    /// Parameter-dependent factor `Φ^f_q(p)`.
    pub fn factor(&self, maps: &AffineMapSet) -> f64 {
        let m = &maps.maps[self.macro_index];
        match self.kind {
            LoadKind::Current => m.det,
            // H_1 ∂v/∂x_2 and −H_2 ∂v/∂x_1 with ∇v = C^{-T} ∇̂v
            LoadKind::Field { component: 0, direction } => m.det * m.c_inv_t[(1, direction)],
            LoadKind::Field { direction, .. } => -m.det * m.c_inv_t[(0, direction)],
        }
    }
}

pub(crate) fn load_pieces(problem: &TruthProblem) -> Vec<LoadPiece> {
    let mut out = Vec::new();
    for (d, tri) in problem.geometry.triangles.iter().enumerate() {
        if tri.region.is_iron() {
            continue;
        }
        let j = problem.sources.current.get(tri.region);
        if j != 0.0 {
            out.push(LoadPiece {
                macro_index: d,
                kind: LoadKind::Current,
                value: j,
            });
        }
        let h = problem.sources.magnet_field.get(tri.region);
        for component in 0..2 {
            if h[component] != 0.0 {
                for direction in 0..2 {
                    out.push(LoadPiece {
                        macro_index: d,
                        kind: LoadKind::Field {
                            component,
                            direction,
                        },
                        value: h[component],
                    });
                }
            }
        }
    }
    out
}

/// Truth-length functional `f_q(φ_i)` of one load piece.
pub(crate) fn load_piece_vector(problem: &TruthProblem, piece: &LoadPiece) -> Vec<f64> {
    let mesh = &problem.space.mesh;
    let tris: Vec<usize> = (0..mesh.len())
        .filter(|&t| mesh.macro_index[t] == piece.macro_index)
        .collect();
    problem.space.assemble_vector_on(&tris, |t| {
        let a = mesh.area[t] * piece.value;
        match piece.kind {
            LoadKind::Current => [a / 3.0; 3],
            LoadKind::Field { direction, .. } => mesh.gradients[t].map(|g| a * g[direction]),
        }
    })
}

/// Reference gradients of each basis column on every fine triangle; row
/// `2t + c` holds `∂ζ_n/∂x̂_c` on triangle `t`.
pub fn basis_gradients(space: &TruthSpace, basis: &[Vec<f64>]) -> DMatrix<f64> {
    let nt = space.mesh.len();
    let mut g = DMatrix::zeros(2 * nt, basis.len());
    for (n, zeta) in basis.iter().enumerate() {
        for t in 0..nt {
            let grad = space.gradient(t, zeta);
            g[(2 * t, n)] = grad[0];
            g[(2 * t + 1, n)] = grad[1];
        }
    }
    g
}

/// Nonlinear blocks `[(m·L1 + l)·4 + 2i + j]` and linear blocks `[l·4 + 2i + j]`.
pub(crate) fn assemble_blocks(
    problem: &TruthProblem,
    grads: &DMatrix<f64>,
    eim: &EimApproximation,
    iron_macros: &[usize],
    other_macros: &[usize],
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mesh = &problem.space.mesh;
    let n = grads.ncols();
    let m = eim.len();
    let l1 = iron_macros.len();
    let mut iron_pos = vec![usize::MAX; mesh.len()];
    for (k, &t) in mesh.iron.iter().enumerate() {
        iron_pos[t] = k;
    }
    let by_macro = mesh.triangles_by_macro(problem.geometry.len());
    let mut nonlinear = vec![DMatrix::zeros(n, n); m * l1 * 4];
    let mut outer = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    for (l, &d) in iron_macros.iter().enumerate() {
        for &t in &by_macro[d] {
            let gx = grads.row(2 * t);
            let gy = grads.row(2 * t + 1);
            let rows = [gx, gy];
            // outer[2i + j][k][n] = ∂_jζ_k ∂_iζ_n
            for i in 0..2 {
                for j in 0..2 {
                    let o = &mut outer[2 * i + j];
                    for c in 0..n {
                        let gi = rows[i][c];
                        for r in 0..n {
                            o[(r, c)] = rows[j][r] * gi;
                        }
                    }
                }
            }
            let k = iron_pos[t];
            for (mm, q) in eim.basis.iter().enumerate() {
                let w = mesh.area[t] * q[k];
                for ij in 0..4 {
                    add_scaled(&mut nonlinear[(mm * l1 + l) * 4 + ij], w, &outer[ij]);
                }
            }
        }
    }
    let mut linear = vec![DMatrix::zeros(n, n); other_macros.len() * 4];
    for (l, &d) in other_macros.iter().enumerate() {
        let nu = problem.material.region_value(problem.geometry.triangles[d].region);
        for &t in &by_macro[d] {
            let w = nu * mesh.area[t];
            for i in 0..2 {
                for j in 0..2 {
                    let b = &mut linear[l * 4 + 2 * i + j];
                    for c in 0..n {
                        let gi = grads[(2 * t + i, c)] * w;
                        for r in 0..n {
                            b[(r, c)] += grads[(2 * t + j, r)] * gi;
                        }
                    }
                }
            }
        }
    }
    (nonlinear, linear)
}
