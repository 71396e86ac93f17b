//! Constrained P1 space: Dirichlet nodes removed, anti-periodic nodes folded
//! into their partners with sign −1.

use crate::error::{Error, Result};
use crate::fem::mesh::Triangulation;
use crate::geometry::BoundarySide;
use crate::linalg::{self, SpMat, SymmetricFactor, Triplets};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// `BC`, `DA` Dirichlet; `AB` and `CD` coupled with `u|AB = −u|CD`.
    AntiPeriodic,
    /// Every boundary node Dirichlet.
    AllDirichlet,
}

/// Local element data: for each of the three vertices, the free DOF and the
/// sign with which it enters, or `None` for a Dirichlet node.
pub type LocalDofs = [Option<(usize, f64)>; 3];

#[derive(Debug)]
pub struct TruthSpace {
    pub mesh: Triangulation,
    pub mode: BoundaryMode,
    node_dof: Vec<Option<(usize, f64)>>,
    dof_node: Vec<usize>,
    local: Vec<LocalDofs>,
    gram: SpMat,
    factor: SymmetricFactor,
}

impl TruthSpace {
    pub fn new(mesh: Triangulation, mode: BoundaryMode) -> Result<Self> {
        let nn = mesh.node_count();
        let mut dirichlet = vec![false; nn];
        let mut partner: Vec<Option<usize>> = vec![None; nn];
        for v in 0..nn {
            let sides = mesh.node_sides[v];
            dirichlet[v] = match mode {
                BoundaryMode::AllDirichlet => sides != 0,
                BoundaryMode::AntiPeriodic => {
                    sides & (BoundarySide::BC.bit() | BoundarySide::DA.bit()) != 0
                }
            };
        }
        if mode == BoundaryMode::AntiPeriodic {
            let master: Vec<(usize, f64)> = mesh
                .side_nodes(BoundarySide::AB)
                .iter()
                .copied()
                .filter(|(v, _)| !dirichlet[*v])
                .collect();
            let slave: Vec<(usize, f64)> = mesh
                .side_nodes(BoundarySide::CD)
                .iter()
                .copied()
                .filter(|(v, _)| !dirichlet[*v])
                .collect();
            let total = mesh
                .side_nodes(BoundarySide::AB)
                .last()
                .map(|x| x.1)
                .unwrap_or(0.0)
                .max(mesh.side_nodes(BoundarySide::CD).last().map(|x| x.1).unwrap_or(0.0));
            let tol = 1e-9 * total.max(f64::MIN_POSITIVE);
            let mut unpaired = Vec::new();
            let (mut i, mut j) = (0, 0);
            while i < master.len() || j < slave.len() {
                match (master.get(i), slave.get(j)) {
                    (Some(a), Some(b)) if (a.1 - b.1).abs() <= tol => {
                        partner[b.0] = Some(a.0);
                        i += 1;
                        j += 1;
                    }
                    (Some(a), Some(b)) if a.1 < b.1 => {
                        unpaired.push(format!("AB node {} at s = {}", a.0, a.1));
                        i += 1;
                    }
                    (Some(a), None) => {
                        unpaired.push(format!("AB node {} at s = {}", a.0, a.1));
                        i += 1;
                    }
                    (_, Some(b)) => {
                        unpaired.push(format!("CD node {} at s = {}", b.0, b.1));
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            if !unpaired.is_empty() {
                return Err(Error::UnpairedNodes(unpaired.join(", ")));
            }
        }

        let mut node_dof = vec![None; nn];
        let mut dof_node = Vec::new();
        for v in 0..nn {
            if !dirichlet[v] && partner[v].is_none() {
                node_dof[v] = Some((dof_node.len(), 1.0));
                dof_node.push(v);
            }
        }
        for v in 0..nn {
            if let Some(m) = partner[v] {
                let (dof, _) = node_dof[m].expect("master node is free");
                node_dof[v] = Some((dof, -1.0));
            }
        }
        let local = mesh
            .triangles
            .iter()
            .map(|tri| tri.map(|v| node_dof[v]))
            .collect();
        let mut space = Self {
            mesh,
            mode,
            node_dof,
            dof_node,
            local,
            gram: SpMat::zero((0, 0)),
            factor: SymmetricFactor::Iterative(SpMat::zero((0, 0))),
        };
        let gram = space.assemble_matrix(Execution::default(), |t| {
            let g = &space.mesh.gradients[t];
            let a = space.mesh.area[t];
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
            k
        });
        space.factor = SymmetricFactor::new(&gram)?;
        space.gram = gram;
        Ok(space)
    }

    /// Number of free DOFs `𝒩`.
    pub fn dim(&self) -> usize {
        self.dof_node.len()
    }

    pub fn node_dof(&self, node: usize) -> Option<(usize, f64)> {
        self.node_dof[node]
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn local_dofs(&self, t: usize) -> &LocalDofs {
        &self.local[t]
    }

    /// Reference gradient of the FE function `v` on triangle `t`.
    #[inline]
    pub fn gradient(&self, t: usize, v: &[f64]) -> [f64; 2] {
        let g = &self.mesh.gradients[t];
        let mut out = [0.0; 2];
        for (a, dof) in self.local[t].iter().enumerate() {
            if let Some((i, s)) = dof {
                let c = s * v[*i];
                out[0] += c * g[a][0];
                out[1] += c * g[a][1];
            }
        }
        out
    }

    /// X̂-Gram matrix `K`.
    pub fn gram(&self) -> &SpMat {
        &self.gram
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn x_inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_len(a)?;
        self.check_len(b)?;
        Ok(linalg::bilinear(&self.gram, a, b))
    }

    pub fn x_norm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.x_inner(v, v)?.max(0.0).sqrt())
    }

    /// Riesz representative `K^{-1} r` of the functional with coefficients `r`.
    pub fn riesz(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r)?;
        self.factor.solve(r)
    }

    /// Dual norm `sqrt(rᵀ K^{-1} r)`.
    pub fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        let v = self.riesz(r)?;
        Ok(linalg::dot(r, &v).max(0.0).sqrt())
    }

    /// Nodal values (Dirichlet nodes zero, slaves negated).
    pub fn expand(&self, v: &[f64]) -> Vec<f64> {
        self.node_dof
            .iter()
            .map(|d| d.map_or(0.0, |(i, s)| s * v[i]))
            .collect()
    }

    /// Free coefficients read off nodal values at master nodes.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_node.iter().map(|&v| nodal[v]).collect()
    }

    /// Assembles `Σ_t` of local 3×3 matrices into the constrained space.
    pub fn assemble_matrix<F>(&self, exec: Execution, local: F) -> SpMat
    where
        F: Fn(usize) -> [[f64; 3]; 3] + Sync + Send,
    {
        let mats = par::map_range(exec, self.mesh.len(), local);
        let mut trip = Triplets::with_capacity(self.dim(), 9 * mats.len());
        for (t, m) in mats.iter().enumerate() {
            let dofs = &self.local[t];
            for a in 0..3 {
                let Some((i, si)) = dofs[a] else { continue };
                for b in 0..3 {
                    let Some((j, sj)) = dofs[b] else { continue };
                    trip.push(i, j, si * sj * m[a][b]);
                }
            }
        }
        trip.into_csr()
    }

    /// Assembles `Σ_t` of local 3-vectors into the constrained space.
    pub fn assemble_vector<F>(&self, exec: Execution, local: F) -> Vec<f64>
    where
        F: Fn(usize) -> [f64; 3] + Sync + Send,
    {
        let vecs = par::map_range(exec, self.mesh.len(), local);
        let mut out = vec![0.0; self.dim()];
        for (t, v) in vecs.iter().enumerate() {
            for (a, dof) in self.local[t].iter().enumerate() {
                if let Some((i, s)) = dof {
                    out[*i] += s * v[a];
                }
            }
        }
        out
    }

    /// Like [`assemble_vector`](Self::assemble_vector) restricted to a subset of triangles.
    pub fn assemble_vector_on<F>(&self, triangles: &[usize], mut local: F) -> Vec<f64>
    where
        F: FnMut(usize) -> [f64; 3],
    {
        let mut out = vec![0.0; self.dim()];
        for &t in triangles {
            let v = local(t);
            for (a, dof) in self.local[t].iter().enumerate() {
                if let Some((i, s)) = dof {
                    out[*i] += s * v[a];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::generate_mesh;
    use crate::geometry::{benchmark_cell, BoundarySide};

    #[test]
    fn constraints_hold_on_expanded_functions() {
        let g = benchmark_cell();
        let space = TruthSpace::new(generate_mesh(&g, 2), BoundaryMode::AntiPeriodic).unwrap();
        let v: Vec<f64> = (0..space.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let nodal = space.expand(&v);
        let m = &space.mesh;
        for side in [BoundarySide::BC, BoundarySide::DA] {
            for &(n, _) in m.side_nodes(side) {
                assert_eq!(nodal[n], 0.0);
            }
        }
        for (a, b) in m.side_nodes(BoundarySide::AB).iter().zip(m.side_nodes(BoundarySide::CD)) {
            assert_eq!(nodal[a.0], -nodal[b.0]);
        }
        // restrict . expand = id
        assert_eq!(space.restrict(&nodal), v);
        // expand . restrict is idempotent
        let again = space.expand(&space.restrict(&nodal));
        assert_eq!(again, nodal);
    }

    #[test]
    fn x_norm_basics() {
        let g = benchmark_cell();
        let space = TruthSpace::new(generate_mesh(&g, 1), BoundaryMode::AntiPeriodic).unwrap();
        let n = space.dim();
        assert_eq!(space.x_norm(&vec![0.0; n]).unwrap(), 0.0);
        let mut e = vec![0.0; n];
        e[3] = 1.0;
        let kii = *space.gram().get(3, 3).unwrap();
        assert!((space.x_norm(&e).unwrap() - kii.sqrt()).abs() < 1e-15 * kii.sqrt().max(1.0));
        assert!(matches!(space.x_norm(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
