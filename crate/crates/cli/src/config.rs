//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use quasirb::online::{JacobianMode, NuLbMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Geometry file; the built-in benchmark cell when absent.
    pub geometry: Option<PathBuf>,
    pub level: u32,
    /// `anti-periodic` or `dirichlet`.
    pub boundary: String,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; `0` uses every core, `1` runs sequentially.
    pub jobs: usize,
    pub material: MaterialConfig,
    pub tolerances: Tolerances,
    pub grids: Grids,
    pub limits: Limits,
    pub online: OnlineConfig,
    pub verify: VerifyConfig,
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    /// `exponential`, `table` or `constant`.
    pub curve: String,
    /// `k1 k2 k3` of `k1 + k2 exp(k3 s²)`.
    pub coefficients: [f64; 3],
    pub table: Option<PathBuf>,
    /// Reluctivity for `constant`.
    pub constant: f64,
    pub nu_air: f64,
    pub nu_magnet: f64,
    pub nu_coil: f64,
    /// Magnet field `(H1, H2)` in A/m.
    pub magnet_field: [f64; 2],
    pub coil_current: f64,
    /// Flux range on which the curve is validated for the certified `ν_LB`.
    pub flux_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub truth: f64,
    pub online: f64,
    /// Truth tolerance of verification solves.
    pub verify_truth: f64,
    pub eim: f64,
    pub rb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub eim: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `stratified` (one uniform draw per cell) or `regular`.
    pub test_sampling: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub n_max: usize,
    pub m_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// `heuristic` or `floor`.
    pub nu_lb: String,
    /// `picard` or `full`.
    pub jacobian: String,
    pub eim_error: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Basis sizes and EIM sizes of the table rows; empty means all.
    pub n: Vec<usize>,
    pub m: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub samples: usize,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: None,
            level: 3,
            boundary: "anti-periodic".into(),
            output: PathBuf::from("out"),
            seed: 2024,
            jobs: 0,
            material: MaterialConfig::default(),
            tolerances: Tolerances::default(),
            grids: Grids::default(),
            limits: Limits::default(),
            online: OnlineConfig::default(),
            verify: VerifyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            curve: "exponential".into(),
            coefficients: [120.0, 80.0, 2.0],
            table: None,
            constant: 1000.0,
            nu_air: quasirb::material::NU_AIR,
            nu_magnet: quasirb::material::NU_AIR,
            nu_coil: quasirb::material::NU_AIR,
            magnet_field: [0.0, 3e5],
            coil_current: 0.0,
            flux_range: 1.9,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            truth: 1e-4,
            online: 1e-5,
            verify_truth: 1e-10,
            eim: 0.5,
            rb: 2e-3,
        }
    }
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            eim: vec![3, 3, 3],
            train: vec![5, 5, 5],
            test: vec![4, 4, 4],
            test_sampling: "stratified".into(),
        }
    }
}

impl Default for Limits {
    fn default() -> Self {
        Self { n_max: 12, m_max: 30 }
    }
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            nu_lb: "heuristic".into(),
            jacobian: "picard".into(),
            eim_error: true,
        }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: vec![2, 4, 6, 8, 10, 12],
            m: vec![10, 20, 30],
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { samples: 20, repeats: 5 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative paths are taken relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(g) = &cfg.geometry {
            if g.is_relative() {
                cfg.geometry = Some(base.join(g));
            }
        }
        if let Some(t) = &cfg.material.table {
            if t.is_relative() {
                cfg.material.table = Some(base.join(t));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("truth", t.truth),
            ("online", t.online),
            ("verify_truth", t.verify_truth),
            ("eim", t.eim),
            ("rb", t.rb),
        ] {
            if !(v > 0.0) {
                bail!("tolerance {name} must be positive, got {v}");
            }
        }
        for (name, g) in [("eim", &self.grids.eim), ("train", &self.grids.train), ("test", &self.grids.test)] {
            if g.is_empty() || g.contains(&0) {
                bail!("grid {name} needs positive sizes, got {g:?}");
            }
        }
        if self.limits.n_max == 0 || self.limits.m_max == 0 {
            bail!("n_max and m_max must be at least 1");
        }
        if !matches!(self.boundary.as_str(), "anti-periodic" | "dirichlet") {
            bail!("unknown boundary mode `{}`", self.boundary);
        }
        if !matches!(self.grids.test_sampling.as_str(), "stratified" | "regular") {
            bail!("unknown test sampling `{}`", self.grids.test_sampling);
        }
        self.nu_lb_mode()?;
        self.jacobian_mode()?;
        Ok(())
    }

    pub fn nu_lb_mode(&self) -> Result<NuLbMode> {
        match self.online.nu_lb.as_str() {
            "heuristic" => Ok(NuLbMode::Heuristic),
            "floor" => Ok(NuLbMode::CertifiedFloor),
            other => bail!("unknown nu_lb mode `{other}`"),
        }
    }

    pub fn jacobian_mode(&self) -> Result<JacobianMode> {
        match self.online.jacobian.as_str() {
            "picard" => Ok(JacobianMode::Picard),
            "full" => Ok(JacobianMode::Full),
            other => bail!("unknown jacobian mode `{other}`"),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
