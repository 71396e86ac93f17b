//! Reference-domain decomposition into macro-triangles and the piecewise-affine
//! parameter-to-geometry map.
//!
//! Every macro-triangle `d` is mapped by `x = C_d(p) x̂ + z_d(p)`. Vertex
//! positions are affine in the parameter, so each map is recovered exactly from
//! its three vertex correspondences. The metric `G_d = C_d^{-1} C_d^{-T}` and
//! `|det C_d|` enter every pulled-back bilinear form.

mod benchmark;
pub mod format;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

pub use benchmark::benchmark_cell;
pub use format::{parse_geometry, read_geometry, write_geometry};

/// Relative threshold on `|det C_d|` below which a macro-triangle is degenerate.
pub const DEGENERACY_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("zero dimensions".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidBox(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidBox(format!(
                    "dimension {i}: lower {lo} is not below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims()
            && p.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (lo, hi))| {
                let slack = 1e-12 * (hi - lo);
                *x >= lo - slack && *x <= hi + slack
            })
    }

    pub fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dims() {
            return Err(Error::ParamDims {
                expected: self.dims(),
                got: p.len(),
            });
        }
        if !self.contains(p) {
            return Err(Error::OutOfBox { param: p.into() });
        }
        Ok(())
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    /// All `2^dims` corners, first dimension varying fastest.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dims();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
                    .collect()
            })
            .collect()
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect()
    }

    /// Regular tensor grid with `counts[i]` points per dimension (endpoints
    /// included; a count of one gives the midpoint). First dimension varies
    /// slowest.
    pub fn grid(&self, counts: &[usize]) -> Vec<Vec<f64>> {
        assert_eq!(counts.len(), self.dims());
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                if c <= 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..c)
                        .map(|k| {
                            if k + 1 == c {
                                hi
                            } else {
                                lo + (hi - lo) * k as f64 / (c - 1) as f64
                            }
                        })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&x| {
                        let mut q = prefix.clone();
                        q.push(x);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Air,
    Magnet,
    Coil,
    Iron,
}

impl Region {
    pub fn is_iron(self) -> bool {
        matches!(self, Region::Iron)
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Air => "air",
            Region::Magnet => "magnet",
            Region::Coil => "coil",
            Region::Iron => "iron",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "air" => Some(Region::Air),
            "magnet" => Some(Region::Magnet),
            "coil" => Some(Region::Coil),
            "iron" => Some(Region::Iron),
            _ => None,
        }
    }
}

/// Boundary segments of the reference domain. `BC` and `DA` carry homogeneous
/// Dirichlet data, `AB` and `CD` are coupled anti-periodically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundarySide {
    AB,
    BC,
    CD,
    DA,
}

impl BoundarySide {
    pub const ALL: [BoundarySide; 4] = [
        BoundarySide::AB,
        BoundarySide::BC,
        BoundarySide::CD,
        BoundarySide::DA,
    ];

    pub fn bit(self) -> u8 {
        match self {
            BoundarySide::AB => 1,
            BoundarySide::BC => 2,
            BoundarySide::CD => 4,
            BoundarySide::DA => 8,
        }
    }

    pub fn is_dirichlet(self) -> bool {
        matches!(self, BoundarySide::BC | BoundarySide::DA)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundarySide::AB => "AB",
            BoundarySide::BC => "BC",
            BoundarySide::CD => "CD",
            BoundarySide::DA => "DA",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AB" => Some(BoundarySide::AB),
            "BC" => Some(BoundarySide::BC),
            "CD" => Some(BoundarySide::CD),
            "DA" => Some(BoundarySide::DA),
            _ => None,
        }
    }
}

/// Vertex position affine in the parameter:
/// `x(p) = reference + Σ_k sensitivity[k] (p_k - p̂_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexFunction {
    pub reference: [f64; 2],
    pub sensitivity: Vec<[f64; 2]>,
}

impl VertexFunction {
    pub fn fixed(x: f64, y: f64, dims: usize) -> Self {
        Self {
            reference: [x, y],
            sensitivity: vec![[0.0; 2]; dims],
        }
    }

    fn displacement(&self, p: &[f64], p_ref: &[f64]) -> [f64; 2] {
        let mut d = [0.0; 2];
        for ((s, x), x0) in self.sensitivity.iter().zip(p).zip(p_ref) {
            let dp = x - x0;
            d[0] += s[0] * dp;
            d[1] += s[1] * dp;
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroTriangle {
    pub vertices: [usize; 3],
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub side: BoundarySide,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroDecomposition {
    pub vertices: Vec<VertexFunction>,
    pub triangles: Vec<MacroTriangle>,
    pub boundary: Vec<BoundaryEdge>,
    pub parameter_box: ParameterBox,
    /// Reference parameter `p̂`; the reference domain is the geometry at `p̂`.
    pub reference_parameter: Vec<f64>,
}

impl MacroDecomposition {
    /// Number of macro-triangles `L`.
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Indices of iron macro-triangles (the `L1` set), in ascending order.
    pub fn iron_triangles(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&d| self.triangles[d].region.is_iron())
            .collect()
    }

    /// Indices of non-iron macro-triangles (the `L2` set), in ascending order.
    pub fn other_triangles(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&d| !self.triangles[d].region.is_iron())
            .collect()
    }

    pub fn vertex_position(&self, v: usize, p: &[f64]) -> [f64; 2] {
        let f = &self.vertices[v];
        let d = f.displacement(p, &self.reference_parameter);
        [f.reference[0] + d[0], f.reference[1] + d[1]]
    }

    fn displacement(&self, v: usize, p: &[f64]) -> [f64; 2] {
        self.vertices[v].displacement(p, &self.reference_parameter)
    }

    /// Signed area of macro-triangle `d` at parameter `p`.
    pub fn signed_area(&self, d: usize, p: &[f64]) -> f64 {
        let [a, b, c] = self.triangles[d].vertices.map(|v| self.vertex_position(v, p));
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Length scale of the reference domain (bounding-box diagonal).
    pub fn length_scale(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v.reference[k]);
                hi[k] = hi[k].max(v.reference[k]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Maps each vertex to the lowest-index vertex sharing its reference
    /// position; duplicated vertices are merged by the mesh generator.
    pub fn canonical_vertices(&self) -> Vec<usize> {
        let tol = 1e-12 * self.length_scale().max(f64::MIN_POSITIVE);
        let mut canon: Vec<usize> = (0..self.vertices.len()).collect();
        for i in 0..self.vertices.len() {
            for j in 0..i {
                if canon[j] == j {
                    let (a, b) = (self.vertices[i].reference, self.vertices[j].reference);
                    if (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol {
                        canon[i] = j;
                        break;
                    }
                }
            }
        }
        canon
    }
}

/// Affine map of one macro-triangle together with its cached metric data.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub c: Matrix2<f64>,
    pub z: Vector2<f64>,
    /// `C^{-T}`, used to pull back physical gradients.
    pub c_inv_t: Matrix2<f64>,
    /// `G = C^{-1} C^{-T}`.
    pub g: Matrix2<f64>,
    /// `|det C|`.
    pub det: f64,
}

impl AffineMap {
    fn identity() -> Self {
        Self {
            c: Matrix2::identity(),
            z: Vector2::zeros(),
            c_inv_t: Matrix2::identity(),
            g: Matrix2::identity(),
            det: 1.0,
        }
    }

    /// Parameter-dependent factor `|det C| G_ij` multiplying the
    /// parameter-independent form `∫ ∂w/∂x̂_i ∂v/∂x̂_j`.
    #[inline]
    pub fn metric(&self, i: usize, j: usize) -> f64 {
        self.det * self.g[(i, j)]
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let y = self.c * Vector2::new(x[0], x[1]) + self.z;
        [y[0], y[1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineMapSet {
    pub parameter: Vec<f64>,
    pub maps: Vec<AffineMap>,
}

impl AffineMapSet {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

pub fn build_affine_maps(decomp: &MacroDecomposition, p: &[f64]) -> Result<AffineMapSet> {
    decomp.parameter_box.check(p)?;
    let mut maps = Vec::with_capacity(decomp.len());
    for (d, tri) in decomp.triangles.iter().enumerate() {
        let [i0, i1, i2] = tri.vertices;
        let r = [i0, i1, i2].map(|v| decomp.vertices[v].reference);
        let disp = [i0, i1, i2].map(|v| decomp.displacement(v, p));
        if disp.iter().all(|u| u[0] == 0.0 && u[1] == 0.0) {
            maps.push(AffineMap::identity());
            continue;
        }
        // C = I + ΔE E_ref^{-1}, exact identity when the vertices do not move.
        let e_ref = Matrix2::new(
            r[1][0] - r[0][0],
            r[2][0] - r[0][0],
            r[1][1] - r[0][1],
            r[2][1] - r[0][1],
        );
        let de = Matrix2::new(
            disp[1][0] - disp[0][0],
            disp[2][0] - disp[0][0],
            disp[1][1] - disp[0][1],
            disp[2][1] - disp[0][1],
        );
        let e_inv = inverse2(&e_ref).ok_or_else(|| Error::DegenerateTriangle {
            triangle: d,
            param: p.into(),
            det: 0.0,
        })?;
        let c = Matrix2::identity() + de * e_inv;
        let det = c.determinant();
        if det.abs() < DEGENERACY_TOL {
            return Err(Error::DegenerateTriangle {
                triangle: d,
                param: p.into(),
                det,
            });
        }
        let v0 = Vector2::new(r[0][0] + disp[0][0], r[0][1] + disp[0][1]);
        let z = v0 - c * Vector2::new(r[0][0], r[0][1]);
        let c_inv = inverse2(&c).expect("nonzero determinant");
        let c_inv_t = c_inv.transpose();
        let g = c_inv * c_inv_t;
        // exact symmetry
        let g = Matrix2::new(g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]);
        maps.push(AffineMap {
            c,
            z,
            c_inv_t,
            g,
            det: det.abs(),
        });
    }
    Ok(AffineMapSet {
        parameter: p.to_vec(),
        maps,
    })
}

fn inverse2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det == 0.0 {
        return None;
    }
    Some(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric positive definite 2×2 matrix
/// from its trace and determinant.
pub fn spd_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let max = mean + radius;
    let det = a * c - b * b;
    // λ_min from the determinant avoids cancellation in mean - radius
    let min = if max > 0.0 { det / max } else { mean - radius };
    (min, max)
}

/// Geometric constants `(C1, C2)` bounding the pulled-back `X(p)` norm by the
/// reference norm from below and above.
pub fn geometric_constants(maps: &AffineMapSet) -> (f64, f64) {
    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0f64;
    for m in &maps.maps {
        let (lo, hi) = spd_eigenvalues(&m.g);
        c1 = c1.min(lo * m.det);
        c2 = c2.max(hi * m.det);
    }
    (c1, c2)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ValidationFailure {
    Degenerate {
        triangle: usize,
        param: Vec<f64>,
    },
    Flipped {
        triangle: usize,
        param: Vec<f64>,
    },
    Discontinuous {
        vertices: (usize, usize),
        param: Vec<f64>,
        gap: f64,
    },
    OutOfBox {
        param: Vec<f64>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Triangles named in orientation or degeneracy failures.
    pub fn offending_triangles(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .failures
            .iter()
            .filter_map(|f| match f {
                ValidationFailure::Degenerate { triangle, .. }
                | ValidationFailure::Flipped { triangle, .. } => Some(*triangle),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Checks orientation, non-degeneracy and continuity of the parametrized
/// decomposition at each sample. Never fails; problems are collected in the
/// report.
pub fn validate_decomposition(decomp: &MacroDecomposition, samples: &[Vec<f64>]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let canon = decomp.canonical_vertices();
    let scale = decomp.length_scale();
    for p in samples {
        if !decomp.parameter_box.contains(p) {
            report.failures.push(ValidationFailure::OutOfBox { param: p.clone() });
            continue;
        }
        for d in 0..decomp.len() {
            let ref_area = decomp.signed_area(d, &decomp.reference_parameter).abs();
            let area = decomp.signed_area(d, p);
            if area.abs() < DEGENERACY_TOL * ref_area.max(f64::MIN_POSITIVE) {
                report.failures.push(ValidationFailure::Degenerate {
                    triangle: d,
                    param: p.clone(),
                });
            } else if area < 0.0 {
                report.failures.push(ValidationFailure::Flipped {
                    triangle: d,
                    param: p.clone(),
                });
            }
        }
        for (v, &c) in canon.iter().enumerate() {
            if c != v {
                let (a, b) = (decomp.vertex_position(v, p), decomp.vertex_position(c, p));
                let gap = (a[0] - b[0]).hypot(a[1] - b[1]);
                if gap > 1e-12 * scale {
                    report.failures.push(ValidationFailure::Discontinuous {
                        vertices: (c, v),
                        param: p.clone(),
                        gap,
                    });
                }
            }
        }
    }
    report
}
