//! Scenario configuration: a sectioned TOML file plus the presets shipped in-repo.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KreinError, Result};
use crate::grid::Grid;
use crate::krein::KreinOptions;
use crate::linearize::DEFAULT_ZERO_TOL;
use crate::stationary::{NewtonOptions, StateLabel, DEFAULT_MAX_ITER, DEFAULT_NEWTON_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Gp1d,
    Gp2d,
}

impl Model {
    pub fn dim(self) -> usize {
        match self {
            Model::Gp1d => 1,
            Model::Gp2d => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Ground,
    DarkSoliton,
    Vortex,
    VortexDipole,
}

/// Chemical potentials to visit: from `start` toward `stop` (either direction) in
/// steps of `step`, always ending on `stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl MuRange {
    pub fn values(&self) -> Vec<f64> {
        let dir = if self.stop < self.start { -1.0 } else { 1.0 };
        let n = ((self.stop - self.start).abs() / self.step + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| self.start + dir * i as f64 * self.step).collect();
        if (v[v.len() - 1] - self.stop).abs() > 1e-9 * self.stop.abs().max(1.0) {
            v.push(self.stop);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub dx: f64,
}

/// How the first state is seeded and how the branch is continued.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Chemical potential at which the seed is imprinted; defaults to the first target.
    pub mu: Option<f64>,
    /// Largest continuation step.
    pub d_mu_max: Option<f64>,
    /// Gauss-Hermite amplitude; defaults to the weakly nonlinear estimate.
    pub amplitude: Option<f64>,
    /// Defect separation for dipole seeds; defaults to two trap lengths.
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Upper end of the real window; defaults to `4 omega^2`.
    pub z_max: Option<f64>,
    pub samples: usize,
    /// Coarse cells of the complex search, `(re, im)`.
    pub complex_cells: (usize, usize),
    /// How many times the window may double when the index identity is short.
    pub max_extensions: usize,
    /// Phase-field grid written next to the report, if set.
    pub phase_field: Option<(usize, usize)>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            z_max: None,
            samples: 2000,
            complex_cells: (8, 4),
            max_extensions: 4,
            phase_field: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub zero_tol: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub removable_tol: f64,
    pub zero_cross_tol: f64,
    pub slope_tol: f64,
    pub overlap_min: f64,
    pub residue_increment: f64,
    /// Largest accepted `|lambda_krein - lambda_direct|`.
    pub oracle_tol: f64,
    /// Bisection tolerance for transitions in `mu`.
    pub sweep_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let k = KreinOptions::default();
        Tolerances {
            zero_tol: DEFAULT_ZERO_TOL,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_MAX_ITER,
            removable_tol: k.removable_tol,
            zero_cross_tol: k.zero_cross_tol,
            slope_tol: k.slope_tol,
            overlap_min: k.overlap_min,
            residue_increment: 5e-6,
            oracle_tol: 1e-6,
            sweep_tol: 1e-2,
        }
    }
}

impl Tolerances {
    pub fn krein_options(&self) -> KreinOptions {
        KreinOptions {
            removable_tol: self.removable_tol,
            zero_cross_tol: self.zero_cross_tol,
            slope_tol: self.slope_tol,
            overlap_min: self.overlap_min,
            ..KreinOptions::default()
        }
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub enabled: bool,
    /// Initial number of eigenvalues requested; grown until the window is covered.
    pub k_eigs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { enabled: true, k_eigs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: Model,
    pub state: StateKind,
    /// Number of dark solitons (1D only).
    #[serde(default)]
    pub solitons: usize,
    pub omega: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub mu_range: Option<MuRange>,
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: SeedConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

const PRESETS: &[(&str, &str)] = &[
    ("vortex-mu045", include_str!("../presets/vortex-mu045.toml")),
    ("vortex-mu075", include_str!("../presets/vortex-mu075.toml")),
    ("vortex-sweep", include_str!("../presets/vortex-sweep.toml")),
    ("dipole-mu071", include_str!("../presets/dipole-mu071.toml")),
    ("dipole-mu080", include_str!("../presets/dipole-mu080.toml")),
    ("dipole-sweep", include_str!("../presets/dipole-sweep.toml")),
    ("dipole-existence", include_str!("../presets/dipole-existence.toml")),
    ("3dark-mu420", include_str!("../presets/3dark-mu420.toml")),
    ("3dark-mu500", include_str!("../presets/3dark-mu500.toml")),
    ("3dark-mu1030", include_str!("../presets/3dark-mu1030.toml")),
    ("3dark-sweep", include_str!("../presets/3dark-sweep.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// A shipped preset by name.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .ok_or_else(|| KreinError::Config(format!("unknown preset `{name}` (known: {})", preset_names().join(", "))))?;
    ScenarioConfig::from_toml(text)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| KreinError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KreinError::Config(format!("{}: {msg}", self.name)));
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        match (self.mu, self.mu_range) {
            (None, None) => return bad("set either `mu` or `mu_range`".into()),
            (Some(mu), _) if !(mu.is_finite() && mu > 0.0) => return bad(format!("mu must be positive, got {mu}")),
            (_, Some(r)) => {
                if !(r.start > 0.0 && r.stop > 0.0 && r.stop.is_finite() && r.step > 0.0) {
                    return bad(format!("mu_range needs positive start, stop and step, got {r:?}"));
                }
            }
            _ => {}
        }
        Grid::new(self.model.dim(), self.grid.n, self.grid.dx).map_err(|e| KreinError::Config(e.to_string()))?;
        match (self.model, self.state) {
            (Model::Gp1d, StateKind::Vortex | StateKind::VortexDipole) => {
                return bad("phase-defect states need model = gp2d".into())
            }
            (Model::Gp2d, StateKind::DarkSoliton) => return bad("dark solitons are 1D states".into()),
            (Model::Gp1d, StateKind::DarkSoliton) if self.solitons == 0 => {
                return bad("dark-soliton state needs `solitons` >= 1".into())
            }
            _ => {}
        }
        let t = &self.tolerances;
        let positive = [
            ("zero_tol", t.zero_tol),
            ("newton_tol", t.newton_tol),
            ("removable_tol", t.removable_tol),
            ("zero_cross_tol", t.zero_cross_tol),
            ("slope_tol", t.slope_tol),
            ("overlap_min", t.overlap_min),
            ("residue_increment", t.residue_increment),
            ("oracle_tol", t.oracle_tol),
            ("sweep_tol", t.sweep_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("tolerance `{name}` must be positive, got {v}"));
            }
        }
        if t.newton_max_iter == 0 {
            return bad("newton_max_iter must be positive".into());
        }
        if let Some(z) = self.scan.z_max {
            if !(z.is_finite() && z > 0.0) {
                return bad(format!("scan.z_max must be positive, got {z}"));
            }
        }
        if self.scan.samples < 100 {
            return bad(format!("scan.samples must be at least 100, got {}", self.scan.samples));
        }
        if self.scan.complex_cells.0 == 0 || self.scan.complex_cells.1 == 0 {
            return bad("scan.complex_cells must be positive".into());
        }
        for (name, v) in [("seed.mu", self.seed.mu), ("seed.d_mu_max", self.seed.d_mu_max), ("seed.separation", self.seed.separation)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// Every chemical potential the scenario reports on, in continuation order.
    pub fn mu_values(&self) -> Vec<f64> {
        match (self.mu_range, self.mu) {
            (Some(r), _) => r.values(),
            (None, Some(mu)) => vec![mu],
            (None, None) => Vec::new(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.model.dim(), self.grid.n, self.grid.dx)
    }

    pub fn label(&self) -> StateLabel {
        match self.state {
            StateKind::Ground => StateLabel::Ground,
            StateKind::DarkSoliton => StateLabel::DarkSoliton(self.solitons),
            StateKind::Vortex => StateLabel::Vortex,
            StateKind::VortexDipole => StateLabel::VortexDipole,
        }
    }

    /// Upper end of the real scan window before any extension.
    pub fn z_max(&self) -> f64 {
        self.scan.z_max.unwrap_or(4.0 * self.omega * self.omega)
    }

    pub fn d_mu_max(&self) -> f64 {
        self.seed.d_mu_max.unwrap_or(match self.model {
            Model::Gp1d => 0.1,
            Model::Gp2d => 0.02,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
            assert!(!cfg.mu_values().is_empty());
        }
    }

    #[test]
    fn round_trip() {
        let cfg = preset("vortex-mu045").unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_values() {
        let base = preset("vortex-mu045").unwrap().to_toml();
        let neg_tol = base.replace("zero_tol = 0.005", "zero_tol = -1.0");
        assert!(ScenarioConfig::from_toml(&neg_tol).is_err());
        let mut cfg = preset("3dark-sweep").unwrap();
        cfg.mu_range = Some(MuRange { start: 5.0, stop: 4.0, step: 0.0 });
        assert!(cfg.validate().is_err());
        cfg.mu_range = None;
        cfg.mu = None;
        assert!(cfg.validate().is_err());
        let mut cfg = preset("vortex-mu045").unwrap();
        cfg.model = Model::Gp1d;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mu_range_includes_endpoint() {
        let r = MuRange { start: 4.0, stop: 4.95, step: 0.25 };
        let v = r.values();
        assert_eq!(v.len(), 5);
        assert!((v[4] - 4.95).abs() < 1e-12);
        let r = MuRange { start: 0.8, stop: 0.6, step: 0.05 };
        let v = r.values();
        assert_eq!(v.len(), 5);
        assert!((v[4] - 0.6).abs() < 1e-12 && v[1] < v[0]);
        let r = MuRange { start: 1.0, stop: 1.0, step: 0.5 };
        assert_eq!(r.values(), vec![1.0]);
    }
}
