//! Greedy empirical interpolation of the iron reluctivity field over triangle
//! barycenters.

use nalgebra::DMatrix;

/// Reluctivity values at all iron barycenters for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearityField {
    pub parameter: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EimApproximation {
    /// Basis functions `q_m` over iron barycenters, one row each.
    pub basis: Vec<Vec<f64>>,
    /// Magic points as positions in the iron barycenter list.
    pub magic: Vec<usize>,
    /// Lower triangular interpolation matrix `B_ij = q_j(x_i)`.
    pub matrix: DMatrix<f64>,
    /// Largest interpolation residual over the training fields with
    /// `m = 0, 1, ..` basis functions.
    pub history: Vec<f64>,
    /// Index (in the training list) of the field selected at each step.
    pub selected: Vec<usize>,
    pub parameters: Vec<Vec<f64>>,
}

/// Sup-norm and location (smallest index on ties) of a vector.
fn sup_index(v: &[f64]) -> (f64, usize) {
    let mut best = (-1.0, 0);
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best.0 {
            best = (a, i);
        }
    }
    best
}

/// Builds the interpolation greedily until the largest residual drops to
/// `eps` or `m_max` basis functions are in place.
pub fn eim_build(fields: &[NonlinearityField], eps: f64, m_max: usize) -> EimApproximation {
    assert!(!fields.is_empty(), "EIM needs at least one field");
    let mut residuals: Vec<Vec<f64>> = fields.iter().map(|f| f.values.clone()).collect();
    let scale = fields
        .iter()
        .map(|f| sup_index(&f.values).0)
        .fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut magic = Vec::new();
    let mut history = Vec::new();
    let mut selected = Vec::new();
    loop {
        let (mut worst, mut worst_k, mut worst_i) = (-1.0, 0, 0);
        for (k, r) in residuals.iter().enumerate() {
            let (v, i) = sup_index(r);
            if v > worst {
                (worst, worst_k, worst_i) = (v, k, i);
            }
        }
        history.push(worst);
        if worst <= eps || basis.len() >= m_max {
            break;
        }
        if worst <= 1e-14 * scale || magic.contains(&worst_i) {
            log::warn!(
                "EIM stopped at M = {}: residual {worst:e} is numerically zero",
                basis.len()
            );
            break;
        }
        let pivot = residuals[worst_k][worst_i];
        let q: Vec<f64> = residuals[worst_k].iter().map(|x| x / pivot).collect();
        for r in residuals.iter_mut() {
            let c = r[worst_i];
            if c != 0.0 {
                for (x, qv) in r.iter_mut().zip(&q) {
                    *x -= c * qv;
                }
            }
        }
        basis.push(q);
        magic.push(worst_i);
        selected.push(worst_k);
    }
    let m = basis.len();
    let matrix = DMatrix::from_fn(m, m, |i, j| basis[j][magic[i]]);
    EimApproximation {
        basis,
        magic,
        matrix,
        history,
        parameters: selected.iter().map(|&k| fields[k].parameter.clone()).collect(),
        selected,
    }
}

impl EimApproximation {
    pub fn len(&self) -> usize {
        self.magic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magic.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.basis.first().map_or(0, |q| q.len())
    }

    /// Solves `B φ = values` by forward substitution.
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let m = self.len();
        assert_eq!(values.len(), m);
        let mut phi = vec![0.0; m];
        for i in 0..m {
            let mut s = values[i];
            for j in 0..i {
                s -= self.matrix[(i, j)] * phi[j];
            }
            phi[i] = s / self.matrix[(i, i)];
        }
        phi
    }

    /// `Σ_m φ_m q_m` at every barycenter.
    pub fn evaluate(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.point_count()];
        for (c, q) in phi.iter().zip(&self.basis) {
            for (o, v) in out.iter_mut().zip(q) {
                *o += c * v;
            }
        }
        out
    }

    /// Interpolant of a full field from its magic-point values.
    pub fn interpolate(&self, field: &[f64]) -> Vec<f64> {
        let values: Vec<f64> = self.magic.iter().map(|&i| field[i]).collect();
        self.evaluate(&self.coefficients(&values))
    }

    /// `max_j |field_j − I_M[field]_j|` over all barycenters.
    pub fn interpolation_error(&self, field: &[f64]) -> f64 {
        let approx = self.interpolate(field);
        field
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// The nested interpolation built from the first `m` greedy steps.
    pub fn truncate(&self, m: usize) -> Self {
        let m = m.min(self.len());
        Self {
            basis: self.basis[..m].to_vec(),
            magic: self.magic[..m].to_vec(),
            matrix: self.matrix.view((0, 0), (m, m)).into_owned(),
            history: self.history[..=m].to_vec(),
            selected: self.selected[..m].to_vec(),
            parameters: self.parameters[..m].to_vec(),
        }
    }
}

/// Convenience wrapper around [`EimApproximation::coefficients`].
pub fn eim_coefficients(approx: &EimApproximation, point_values: &[f64]) -> Vec<f64> {
    approx.coefficients(point_values)
}

/// Convenience wrapper around [`EimApproximation::interpolation_error`].
pub fn eim_interpolation_error(approx: &EimApproximation, field: &NonlinearityField) -> f64 {
    approx.interpolation_error(&field.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: Vec<f64>) -> NonlinearityField {
        NonlinearityField {
            parameter: vec![0.0],
            values,
        }
    }

    #[test]
    fn constant_field() {
        let e = eim_build(&[field(vec![3.0; 7])], 1e-8, 10);
        assert_eq!(e.len(), 1);
        assert_eq!(e.magic, vec![0]);
        assert!(e.basis[0].iter().all(|&q| q == 1.0));
        assert_eq!(e.interpolation_error(&[5.0; 7]), 0.0);
        assert_eq!(e.coefficients(&[2.5]), vec![2.5]);
    }

    #[test]
    fn two_fields_reproduced() {
        let a = field(vec![1.0, 2.0, 3.0, 4.0]);
        let b = field(vec![4.0, 1.0, 0.0, 2.0]);
        let e = eim_build(&[a.clone(), b.clone()], 0.0, 2);
        assert_eq!(e.len(), 2);
        assert!(eim_interpolation_error(&e, &a) <= 1e-12);
        assert!(eim_interpolation_error(&e, &b) <= 1e-12);
        for j in 0..2 {
            let col: Vec<f64> = (0..2).map(|i| e.matrix[(i, j)]).collect();
            let phi = e.coefficients(&col);
            for (k, v) in phi.iter().enumerate() {
                assert!((v - if k == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stops_on_dependent_fields() {
        let a = field(vec![1.0, 2.0, 3.0]);
        let b = field(vec![2.0, 4.0, 6.0]);
        let e = eim_build(&[a, b], 0.0, 5);
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn truncation_is_nested() {
        let fields: Vec<_> = (0..6)
            .map(|k| field((0..20).map(|i| ((i * (k + 1)) as f64 * 0.3).sin()).collect()))
            .collect();
        let e = eim_build(&fields, 0.0, 5);
        let t = e.truncate(3);
        let direct = eim_build(&fields, 0.0, 3);
        assert_eq!(t.magic, direct.magic);
        assert_eq!(t.matrix, direct.matrix);
    }
}
