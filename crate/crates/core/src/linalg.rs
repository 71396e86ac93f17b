//! Sparse matrix helpers and symmetric solves.

use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};

pub type SpMat = CsMat<f64>;

/// Collects `(row, col, value)` entries; duplicates are summed on conversion.
#[derive(Clone, Debug)]
pub struct Triplets {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn into_csr(self) -> SpMat {
        TriMat::from_triplets((self.n, self.n), self.rows, self.cols, self.vals).to_csr()
    }
}

pub fn mul_vec(a: &SpMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    for (i, row) in a.outer_iterator().enumerate() {
        let mut s = 0.0;
        for (j, v) in row.iter() {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `xᵀ A y`.
pub fn bilinear(a: &SpMat, x: &[f64], y: &[f64]) -> f64 {
    let ay = mul_vec(a, y);
    dot(x, &ay)
}

pub fn to_dense(a: &SpMat) -> nalgebra::DMatrix<f64> {
    let mut d = nalgebra::DMatrix::zeros(a.rows(), a.cols());
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, v) in row.iter() {
            d[(i, j)] += *v;
        }
    }
    d
}

/// `a += w · b` for dense matrices of equal shape.
pub fn add_scaled(a: &mut nalgebra::DMatrix<f64>, w: f64, b: &nalgebra::DMatrix<f64>) {
    debug_assert_eq!(a.shape(), b.shape());
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x += w * y;
    }
}

/// Jacobi-preconditioned conjugate gradients. Returns the iterate and the
/// final relative residual.
pub fn conjugate_gradient(a: &SpMat, b: &[f64], rel_tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = b.len();
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i).copied().unwrap_or(0.0);
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, 0.0);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = mul_vec(a, &p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return (x, rel);
        }
        for i in 0..n {
            z[i] = r[i] * diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm2(&r) / bnorm;
    (x, rel)
}

/// Factorization of a symmetric positive definite sparse matrix. Falls back
/// to preconditioned CG when the direct factorization breaks down.
#[derive(Clone, Debug)]
pub enum SymmetricFactor {
    Direct(LdlNumeric<f64, usize>),
    Iterative(SpMat),
}

impl SymmetricFactor {
    pub fn new(a: &SpMat) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        match Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(a.view())
        {
            Ok(f) if f.d().iter().all(|d| d.is_finite() && *d != 0.0) => Ok(Self::Direct(f)),
            _ => {
                log::warn!("sparse LDL factorization failed, using conjugate gradients");
                Ok(Self::Iterative(a.clone()))
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Direct(f) => {
                let x: Vec<f64> = f.solve(b);
                if x.iter().all(|v| v.is_finite()) {
                    Ok(x)
                } else {
                    Err(Error::Singular("non-finite solution from LDL factor".into()))
                }
            }
            Self::Iterative(a) => {
                let (x, rel) = conjugate_gradient(a, b, 1e-14, 20 * b.len().max(10));
                if rel <= 1e-10 {
                    Ok(x)
                } else {
                    Err(Error::Singular(format!(
                        "conjugate gradients stalled at relative residual {rel:e}"
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplace_1d(n: usize) -> SpMat {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        t.into_csr()
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = laplace_1d(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = SymmetricFactor::new(&a).unwrap().solve(&b).unwrap();
        let (y, rel) = conjugate_gradient(&a, &b, 1e-14, 1000);
        assert!(rel < 1e-12);
        for (p, q) in x.iter().zip(&y) {
            assert_relative_eq!(p, q, epsilon = 1e-10);
        }
        let ax = mul_vec(&a, &x);
        for (p, q) in ax.iter().zip(&b) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicates_summed() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 1, 1.0);
        let a = t.into_csr();
        assert_eq!(a.get(0, 0), Some(&3.0));
        assert_eq!(bilinear(&a, &[1.0, 2.0], &[1.0, 1.0]), 5.0);
    }
}
