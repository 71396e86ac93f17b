//! Reluctivity curves, region coefficients and source data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Region;

/// Reluctivity of air, used as the upper bound `ν0` by default.
pub const NU_AIR: f64 = 7.95e5;

/// Monotone cubic Hermite interpolant of `H(B)` through `(0, 0)` and the table
/// knots (Fritsch–Carlson slope limiting).
#[derive(Clone, Debug, PartialEq)]
pub struct BhTable {
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    slopes: Vec<f64>,
}

impl BhTable {
    pub fn new(samples: &[(f64, f64)]) -> Result<Self> {
        let mut b = Vec::with_capacity(samples.len() + 1);
        let mut h = Vec::with_capacity(samples.len() + 1);
        if samples.first().is_none_or(|s| s.0 != 0.0) {
            b.push(0.0);
            h.push(0.0);
        }
        for &(bi, hi) in samples {
            if !bi.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidTable("non-finite entry".into()));
            }
            if bi < 0.0 {
                return Err(Error::InvalidTable(format!("negative B = {bi}")));
            }
            if hi < 0.0 {
                return Err(Error::InvalidTable(format!("negative H = {hi} at B = {bi}")));
            }
            if let Some(&last) = b.last() {
                if bi <= last {
                    return Err(Error::InvalidTable(format!(
                        "B values must increase strictly, {bi} follows {last}"
                    )));
                }
            }
            if let Some(&last) = h.last() {
                if hi < last {
                    return Err(Error::InvalidTable(format!(
                        "H must not decrease, {hi} follows {last} at B = {bi}"
                    )));
                }
            }
            if bi == 0.0 && hi != 0.0 {
                return Err(Error::InvalidTable("H(0) must be 0".into()));
            }
            b.push(bi);
            h.push(hi);
        }
        if b.len() < 2 {
            return Err(Error::InvalidTable("need at least one sample with B > 0".into()));
        }
        if h[1] <= 0.0 {
            return Err(Error::InvalidTable("first slope H/B must be positive".into()));
        }
        let n = b.len();
        let secant: Vec<f64> = (0..n - 1).map(|i| (h[i + 1] - h[i]) / (b[i + 1] - b[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = secant[0];
        m[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            m[i] = if secant[i - 1] * secant[i] <= 0.0 {
                0.0
            } else {
                0.5 * (secant[i - 1] + secant[i])
            };
        }
        for i in 0..n - 1 {
            if secant[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let (a, c) = (m[i] / secant[i], m[i + 1] / secant[i]);
            let r = a * a + c * c;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                m[i] = tau * a * secant[i];
                m[i + 1] = tau * c * secant[i];
            }
        }
        Ok(Self { b, h, slopes: m })
    }

    fn interval(&self, s: f64) -> usize {
        match self.b.binary_search_by(|x| x.total_cmp(&s)) {
            Ok(i) => i.min(self.b.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.b.len() - 2),
        }
    }

    /// `(ν, dν/ds)` on the tabulated range `[0, B_last]`.
    fn eval_inside(&self, s: f64) -> (f64, f64) {
        let i = self.interval(s);
        let (x0, x1) = (self.b[i], self.b[i + 1]);
        let (y0, y1) = (self.h[i], self.h[i + 1]);
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let w = x1 - x0;
        let t = (s - x0) / w;
        if i == 0 {
            // H(s)/s with the common factor t cancelled, so s = 0 is regular
            let nu = m0 * (1.0 - t).powi(2) + (y1 / w) * t * (3.0 - 2.0 * t) + m1 * t * (t - 1.0);
            let dnu_dt = -2.0 * m0 * (1.0 - t) + (y1 / w) * (3.0 - 4.0 * t) + m1 * (2.0 * t - 1.0);
            return (nu, dnu_dt / w);
        }
        let t2 = t * t;
        let t3 = t2 * t;
        let hval = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * w * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * w * m1;
        let dh = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * w * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * w * m1)
            / w;
        (hval / s, (dh * s - hval) / (s * s))
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let last = *self.b.last().unwrap();
        if s <= last {
            return self.eval_inside(s);
        }
        let (nu, dnu) = self.eval_inside(last);
        (nu + dnu * (s - last), dnu)
    }
}

/// Nonlinear iron reluctivity as a function of the flux-density magnitude.
#[derive(Clone, Debug, PartialEq)]
pub enum Curve {
    /// `k1 + k2 exp(k3 s²)`.
    Exponential { k1: f64, k2: f64, k3: f64 },
    Constant(f64),
    Table(BhTable),
}

impl Curve {
    fn raw(&self, s: f64) -> (f64, f64) {
        match self {
            Curve::Exponential { k1, k2, k3 } => {
                let e = k2 * (k3 * s * s).exp();
                (k1 + e, 2.0 * k3 * s * e)
            }
            Curve::Constant(c) => (*c, 0.0),
            Curve::Table(t) => t.eval(s),
        }
    }
}

/// Region-wise constant reluctivities of the non-iron materials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionReluctivity {
    pub air: f64,
    pub magnet: f64,
    pub coil: f64,
}

impl RegionReluctivity {
    pub fn uniform(nu: f64) -> Self {
        Self {
            air: nu,
            magnet: nu,
            coil: nu,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluctivityModel {
    pub curve: Curve,
    /// Upper bound `ν0`; the curve is clamped there.
    pub nu0: f64,
    pub regions: RegionReluctivity,
}

/// Certified constants returned by [`validate_curve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveBounds {
    pub nu_lb: f64,
    pub nu0: f64,
    pub lipschitz: f64,
    pub s_max: f64,
}

impl ReluctivityModel {
    pub fn exponential(k1: f64, k2: f64, k3: f64) -> Self {
        Self {
            curve: Curve::Exponential { k1, k2, k3 },
            nu0: NU_AIR,
            regions: RegionReluctivity::uniform(NU_AIR),
        }
    }

    /// `ν1 = k1 + k2 exp(k3 s²)` with `k = (120, 80, 2)`.
    pub fn default_curve() -> Self {
        Self::exponential(120.0, 80.0, 2.0)
    }

    /// Linear material with the same reluctivity everywhere.
    pub fn constant(nu: f64) -> Self {
        Self {
            curve: Curve::Constant(nu),
            nu0: nu,
            regions: RegionReluctivity::uniform(nu),
        }
    }

    pub fn from_bh_table(samples: &[(f64, f64)]) -> Result<Self> {
        let table = BhTable::new(samples)?;
        for (b, h) in table.b.iter().zip(&table.h).skip(1) {
            if h / b > NU_AIR {
                return Err(Error::InvalidTable(format!(
                    "H/B = {} at B = {b} exceeds the reluctivity of air",
                    h / b
                )));
            }
        }
        Ok(Self {
            curve: Curve::Table(table),
            nu0: NU_AIR,
            regions: RegionReluctivity::uniform(NU_AIR),
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.curve, Curve::Constant(_))
    }

    /// `ν1(s)`.
    #[inline]
    pub fn evaluate(&self, s: f64) -> f64 {
        self.evaluate_with_derivative(s).0
    }

    /// `ν1'(s)`.
    #[inline]
    pub fn evaluate_derivative(&self, s: f64) -> f64 {
        self.evaluate_with_derivative(s).1
    }

    #[inline]
    pub fn evaluate_with_derivative(&self, s: f64) -> (f64, f64) {
        let (nu, d) = self.curve.raw(s.max(0.0));
        if nu >= self.nu0 {
            (self.nu0, 0.0)
        } else {
            (nu, d)
        }
    }

    /// Constant reluctivity of a non-iron region.
    pub fn region_value(&self, region: Region) -> f64 {
        match region {
            Region::Air => self.regions.air,
            Region::Magnet => self.regions.magnet,
            Region::Coil => self.regions.coil,
            Region::Iron => panic!("iron reluctivity depends on the field"),
        }
    }
}

fn round_down(x: f64) -> f64 {
    if x <= 0.0 {
        return x;
    }
    let scale = 10f64.powi(x.log10().floor() as i32 - 5);
    let q = x / scale;
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        x
    } else {
        q.floor() * scale
    }
}

/// Checks `0 < ν1 ≤ ν0` and `0 < d(ν1 s)/ds ≤ 3ν0` on `n_check + 1` equidistant
/// points of `[0, s_max]`. Returns the smallest observed value of `ν1` and of
/// the flux derivative (rounded down) together with `ν0` and `3ν0`.
pub fn validate_curve(model: &ReluctivityModel, s_max: f64, n_check: usize) -> Result<CurveBounds> {
    assert!(s_max > 0.0 && n_check >= 100);
    let mut lowest = f64::INFINITY;
    let tol = 1e-12 * model.nu0;
    for k in 0..=n_check {
        let s = s_max * k as f64 / n_check as f64;
        let (nu, dnu) = model.evaluate_with_derivative(s);
        let flux = nu + dnu * s;
        if !(nu > 0.0) {
            return Err(Error::CurveValidation {
                s,
                reason: format!("reluctivity {nu} is not positive"),
            });
        }
        if nu > model.nu0 + tol {
            return Err(Error::CurveValidation {
                s,
                reason: format!("reluctivity {nu} exceeds nu0 = {}", model.nu0),
            });
        }
        if !(flux > 0.0) {
            return Err(Error::CurveValidation {
                s,
                reason: format!("d(nu s)/ds = {flux} is not positive"),
            });
        }
        if flux > 3.0 * model.nu0 + tol {
            return Err(Error::CurveValidation {
                s,
                reason: format!("d(nu s)/ds = {flux} exceeds 3 nu0 = {}", 3.0 * model.nu0),
            });
        }
        lowest = lowest.min(nu).min(flux);
    }
    Ok(CurveBounds {
        nu_lb: round_down(lowest),
        nu0: model.nu0,
        lipschitz: 3.0 * model.nu0,
        s_max,
    })
}

/// Two-column `B H` text table, `#` starts a comment.
pub fn read_bh_table(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    parse_bh_table(&std::fs::read_to_string(path)?)
}

pub fn parse_bh_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let vals: Vec<&str> = content.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: k + 1,
                message: format!("expected a number, found `{s}`"),
            })
        };
        if vals.len() != 2 {
            return Err(Error::Parse {
                line: k + 1,
                message: "expected two columns `B H`".into(),
            });
        }
        out.push((parse(vals[0])?, parse(vals[1])?));
    }
    Ok(out)
}

/// Current density and permanent-magnet field per non-iron region.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceData {
    pub current: RegionSource<f64>,
    pub magnet_field: RegionSource<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionSource<T> {
    pub air: T,
    pub magnet: T,
    pub coil: T,
}

impl<T: Copy + Default> RegionSource<T> {
    /// Value in `region`; iron never carries sources.
    pub fn get(&self, region: Region) -> T {
        match region {
            Region::Air => self.air,
            Region::Magnet => self.magnet,
            Region::Coil => self.coil,
            Region::Iron => T::default(),
        }
    }
}

impl SourceData {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Magnet magnetized along `x2` with field strength `h` (A/m).
    pub fn magnet(h: f64) -> Self {
        Self {
            magnet_field: RegionSource {
                magnet: [0.0, h],
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        [Region::Air, Region::Magnet, Region::Coil]
            .iter()
            .all(|&r| self.current.get(r) == 0.0 && self.magnet_field.get(r) == [0.0, 0.0])
    }
}
