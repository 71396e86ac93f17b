//! Residual pieces, their Riesz representatives and incremental model assembly.

use nalgebra::DMatrix;

use super::tensors::{assemble_blocks, basis_gradients, load_piece_vector, load_pieces};
use super::{piece_block_size, RbModel};
use crate::eim::EimApproximation;
use crate::error::Result;
use crate::par::{self, Execution};
use crate::truth::TruthProblem;

/// Truth-length functionals of the residual pieces belonging to basis
/// function `zeta` (one column each, in block order).
pub fn residual_pieces(
    problem: &TruthProblem,
    zeta: &[f64],
    eim: &EimApproximation,
    iron_macros: &[usize],
    other_macros: &[usize],
) -> DMatrix<f64> {
    let space = &problem.space;
    let mesh = &space.mesh;
    let m = eim.len();
    let (l1, l2) = (iron_macros.len(), other_macros.len());
    let mut out = DMatrix::zeros(space.dim(), piece_block_size(m, l1, l2));
    let mut slot = vec![usize::MAX; problem.geometry.len()];
    for (l, &d) in iron_macros.iter().enumerate() {
        slot[d] = l;
    }
    for (l, &d) in other_macros.iter().enumerate() {
        slot[d] = l;
    }
    let lin_base = m + 4 * m * l1;
    let mut iron_k = 0;
    for t in 0..mesh.len() {
        let d = mesh.macro_index[t];
        let l = slot[d];
        let g = space.gradient(t, zeta);
        let grads = &mesh.gradients[t];
        let is_iron = mesh.region[t].is_iron();
        let k = if is_iron {
            debug_assert_eq!(mesh.iron[iron_k], t);
            iron_k += 1;
            iron_k - 1
        } else {
            0
        };
        let nu = if is_iron {
            0.0
        } else {
            problem.material.region_value(mesh.region[t])
        };
        for (a, dof) in space.local_dofs(t).iter().enumerate() {
            let Some((row, sign)) = *dof else { continue };
            for i in 0..2 {
                for j in 0..2 {
                    let base = sign * mesh.area[t] * g[i] * grads[a][j];
                    if is_iron {
                        for (mm, q) in eim.basis.iter().enumerate() {
                            let v = base * q[k];
                            out[(row, m + (mm * l1 + l) * 4 + 2 * i + j)] += v;
                            if i == j {
                                out[(row, mm)] += v;
                            }
                        }
                    } else {
                        out[(row, lin_base + l * 4 + 2 * i + j)] += nu * base;
                    }
                }
            }
        }
    }
    out
}

fn riesz_block(problem: &TruthProblem, pieces: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
    let cols = par::map_range(exec, pieces.ncols(), |c| {
        let col: Vec<f64> = pieces.column(c).iter().copied().collect();
        problem.space.riesz(&col)
    });
    let mut v = DMatrix::zeros(pieces.nrows(), pieces.ncols());
    for (c, col) in cols.into_iter().enumerate() {
        v.set_column(c, &nalgebra::DVector::from_vec(col?));
    }
    Ok(v)
}

/// Grows an [`RbModel`] one basis function at a time, extending the residual
/// Gram matrix by the new pieces only.
pub struct ModelBuilder<'a> {
    problem: &'a TruthProblem,
    exec: Execution,
    columns: Vec<Vec<f64>>,
    riesz: Vec<DMatrix<f64>>,
    load: DMatrix<f64>,
    model: RbModel,
}

impl<'a> ModelBuilder<'a> {
    pub fn new(problem: &'a TruthProblem, eim: EimApproximation, nu_lb_floor: f64) -> Result<Self> {
        Self::with_execution(problem, eim, nu_lb_floor, Execution::default())
    }

    pub fn with_execution(
        problem: &'a TruthProblem,
        eim: EimApproximation,
        nu_lb_floor: f64,
        exec: Execution,
    ) -> Result<Self> {
        let geometry = problem.geometry.clone();
        let mesh = &problem.space.mesh;
        let iron_macros = geometry.iron_triangles();
        let other_macros = geometry.other_triangles();
        let pieces = load_pieces(problem);
        let n_dof = problem.dim();
        let mut load = DMatrix::zeros(n_dof, pieces.len());
        for (q, piece) in pieces.iter().enumerate() {
            load.set_column(q, &nalgebra::DVector::from_vec(load_piece_vector(problem, piece)));
        }
        let v = riesz_block(problem, &load, exec)?;
        let mut gram = load.tr_mul(&v);
        symmetrize(&mut gram);
        let magic_macro = eim
            .magic
            .iter()
            .map(|&k| mesh.macro_index[mesh.iron[k]])
            .collect();
        let iron_macro = mesh.iron.iter().map(|&t| mesh.macro_index[t]).collect();
        let m = eim.len();
        let model = RbModel {
            geometry,
            material: problem.material.clone(),
            nu_lb_floor,
            nu_lb_observed: f64::INFINITY,
            basis: DMatrix::zeros(n_dof, 0),
            parameters: Vec::new(),
            nonlinear_blocks: vec![DMatrix::zeros(0, 0); m * iron_macros.len() * 4],
            linear_blocks: vec![DMatrix::zeros(0, 0); other_macros.len() * 4],
            eim,
            iron_macros,
            other_macros,
            load_pieces: pieces,
            load_vectors: DMatrix::zeros(load.ncols(), 0),
            magic_macro,
            magic_gradients: DMatrix::zeros(2 * m, 0),
            iron_macro,
            iron_gradients: DMatrix::zeros(2 * mesh.iron.len(), 0),
            gram,
        };
        Ok(Self {
            problem,
            exec,
            columns: Vec::new(),
            riesz: vec![v],
            load,
            model,
        })
    }

    pub fn model(&self) -> &RbModel {
        &self.model
    }

    pub fn into_model(self) -> RbModel {
        self.model
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn observe_nu(&mut self, nu: f64) {
        if nu < self.model.nu_lb_observed {
            self.model.nu_lb_observed = nu;
        }
    }

    /// Appends an X̂-orthonormal basis function generated at `parameter`.
    pub fn push(&mut self, zeta: Vec<f64>, parameter: Vec<f64>) -> Result<()> {
        let problem = self.problem;
        let model = &mut self.model;
        let pieces = residual_pieces(problem, &zeta, &model.eim, &model.iron_macros, &model.other_macros);
        let v_new = riesz_block(problem, &pieces, self.exec)?;
        let q_old = model.gram.nrows();
        let p = pieces.ncols();
        let mut gram = DMatrix::zeros(q_old + p, q_old + p);
        gram.view_mut((0, 0), (q_old, q_old)).copy_from(&model.gram);
        let mut offset = 0;
        for block in &self.riesz {
            let cross = block.tr_mul(&pieces);
            let w = cross.ncols();
            gram.view_mut((offset, q_old), (block.ncols(), w)).copy_from(&cross);
            gram.view_mut((q_old, offset), (w, block.ncols())).copy_from(&cross.transpose());
            offset += block.ncols();
        }
        let mut own = v_new.tr_mul(&pieces);
        symmetrize(&mut own);
        gram.view_mut((q_old, q_old), (p, p)).copy_from(&own);
        model.gram = gram;
        self.riesz.push(v_new);

        self.columns.push(zeta);
        model.parameters.push(parameter);
        let n = self.columns.len();
        let n_dof = problem.dim();
        model.basis = DMatrix::from_fn(n_dof, n, |i, j| self.columns[j][i]);
        let grads = basis_gradients(&problem.space, &self.columns);
        let (nonlinear, linear) =
            assemble_blocks(problem, &grads, &model.eim, &model.iron_macros, &model.other_macros);
        model.nonlinear_blocks = nonlinear;
        model.linear_blocks = linear;
        model.load_vectors = self.load.tr_mul(&model.basis);
        let mesh = &problem.space.mesh;
        model.magic_gradients = DMatrix::from_fn(2 * model.eim.len(), n, |r, c| {
            grads[(2 * mesh.iron[model.eim.magic[r / 2]] + r % 2, c)]
        });
        model.iron_gradients =
            DMatrix::from_fn(2 * mesh.iron.len(), n, |r, c| grads[(2 * mesh.iron[r / 2] + r % 2, c)]);
        Ok(())
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
