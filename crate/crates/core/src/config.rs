//! TOML problem files.
//!
//! ```toml
//! [regimes]
//! count = 2
//!
//! [dynamics]
//! b.0 = 0.0
//! b.1 = 0.1
//! sigma.0 = 0.2
//! sigma.1 = 0.3
//!
//! [profit]
//! form = "arctan"        # or "exp_scaled" with eta
//!
//! [cost]
//! form = "inverse_quadratic"   # or "exp_mu" with mu
//!
//! [kernel]
//! p = [[0.0, 1.0], [1.0, 0.0]]
//! m_lo = -1.0
//! m_hi = 1.0
//! jump_std = 1.0
//!
//! [discount]
//! beta = 0.5
//! ```
//!
//! `[grid]`, `[solve]`, `[mc]`, `[strategy]`, `[audit]` and `[fseries]` are
//! optional and fall back to defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::AuditConfig;
use crate::fseries::FSeriesConfig;
use crate::grid::{Grid, GridError};
use crate::model::{
    validate_spec, Coefficient, CostSpec, DynamicsSpec, KernelFamily, ProblemSpec, ProfitSpec, RegimeId, ValidatedSpec,
    ValidationReport,
};
use crate::montecarlo::McConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("FileNotFound: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Validation(#[from] ValidationReport),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub regimes: RegimesSection,
    pub dynamics: DynamicsSection,
    pub profit: ProfitSection,
    pub cost: CostSection,
    pub kernel: KernelSection,
    pub discount: DiscountSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub fseries: FSeriesSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimesSection {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub b: BTreeMap<String, f64>,
    pub sigma: BTreeMap<String, f64>,
    /// Optional affine parts: `b(i, x) = b.i + b_slope.i · x`.
    #[serde(default)]
    pub b_slope: BTreeMap<String, f64>,
    #[serde(default)]
    pub sigma_slope: BTreeMap<String, f64>,
    pub lipschitz_k: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitForm {
    Arctan,
    ExpScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfitSection {
    pub form: ProfitForm,
    pub offset: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    InverseQuadratic,
    ExpMu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub form: CostForm,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub p: Vec<Vec<f64>>,
    pub m_lo: f64,
    pub m_hi: f64,
    pub jump_std: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountSection {
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n: usize,
    pub dt: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { x_lo: -10.0, x_hi: 16.0, n: 521, dt: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub tol: f64,
    pub max_iter: usize,
    /// Threshold of `ρ − m*ρ⁺` below which a grid point is in `I`.
    pub epsilon: f64,
    pub n_gh_step: usize,
    pub n_gh_jump: usize,
    pub m_scan: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        SolveSection {
            tol: s.tol,
            max_iter: s.max_iter,
            epsilon: 1e-6,
            n_gh_step: s.n_gh_step,
            n_gh_jump: s.n_gh_jump,
            m_scan: s.m_scan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub horizon: f64,
    pub seed: u64,
    pub n_max_impulses: usize,
    pub dt: f64,
    /// Episodes whose full path goes to the path dump.
    pub record_paths: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection { n_paths: 10_000, horizon: 20.0, seed: 0, n_max_impulses: 64, dt: 0.01, record_paths: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyForm {
    None,
    Cadence,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub kind: StrategyForm,
    pub t0: f64,
    pub m: f64,
    /// Added to the argmax jump mean of the optimal strategy.
    pub m_offset: f64,
    pub start_regime: usize,
    pub start_x: f64,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection { kind: StrategyForm::Optimal, t0: 1.0, m: 0.0, m_offset: 0.0, start_regime: 0, start_x: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub n_states: usize,
    pub n_kernels: usize,
    pub n_paths: usize,
    pub max_steps: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        let a = AuditConfig::default();
        AuditSection { n_states: a.n_states, n_kernels: a.n_kernels, n_paths: a.n_paths, max_steps: a.max_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FSeriesSection {
    pub order: usize,
    pub t0: f64,
    pub m: f64,
    pub n_points: usize,
}

impl Default for FSeriesSection {
    fn default() -> Self {
        FSeriesSection { order: 25, t0: 1.0, m: 0.3, n_points: FSeriesConfig::default().n_points }
    }
}

/// Command-line replacements for config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub n_points: Option<usize>,
    pub dt: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub horizon: Option<f64>,
}

pub fn load_config(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ConfigError::FileNotFound(path.to_path_buf())
        } else {
            ConfigError::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    ProblemConfig::from_toml(&text)
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut self.grid.x_lo, o.x_lo);
        set(&mut self.grid.x_hi, o.x_hi);
        set(&mut self.grid.dt, o.dt);
        set(&mut self.solve.tol, o.tol);
        set(&mut self.mc.horizon, o.horizon);
        if let Some(n) = o.n_points {
            self.grid.n = n;
        }
        if let Some(s) = o.seed {
            self.mc.seed = s;
        }
        if let Some(n) = o.n_paths {
            self.mc.n_paths = n;
        }
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        let n = self.regimes.count;
        let per_regime = |name: &str, map: &BTreeMap<String, f64>, required: bool| -> Result<Vec<f64>, ConfigError> {
            for key in map.keys() {
                match key.parse::<usize>() {
                    Ok(i) if i < n => {}
                    _ => {
                        return Err(ConfigError::Invalid(format!("{name}.{key}: regime index out of 0..{n}")));
                    }
                }
            }
            (0..n)
                .map(|i| match map.get(&i.to_string()) {
                    Some(&v) => Ok(v),
                    None if !required => Ok(0.0),
                    None => Err(ConfigError::Invalid(format!("missing {name}.{i}"))),
                })
                .collect()
        };
        let coef = |c: f64, s: f64| {
            if s == 0.0 {
                Coefficient::Constant(c)
            } else {
                Coefficient::Affine { intercept: c, slope: s }
            }
        };
        let d = &self.dynamics;
        let b = per_regime("b", &d.b, true)?;
        let sigma = per_regime("sigma", &d.sigma, true)?;
        let b_slope = per_regime("b_slope", &d.b_slope, false)?;
        let sigma_slope = per_regime("sigma_slope", &d.sigma_slope, false)?;
        let mut dynamics = DynamicsSpec {
            drift: b.iter().zip(&b_slope).map(|(&c, &s)| coef(c, s)).collect(),
            vol: sigma.iter().zip(&sigma_slope).map(|(&c, &s)| coef(c, s)).collect(),
            lipschitz_k: 0.0,
        };
        dynamics.lipschitz_k = d.lipschitz_k.unwrap_or_else(|| dynamics.minimal_k());

        let profit = match self.profit.form {
            ProfitForm::Arctan => ProfitSpec::Arctan { offset: self.profit.offset.unwrap_or(FRAC_PI_2) },
            ProfitForm::ExpScaled => ProfitSpec::ExpScaled {
                eta: self.profit.eta.ok_or_else(|| ConfigError::Invalid("profit.eta is required".into()))?,
            },
        };
        let cost = match self.cost.form {
            CostForm::InverseQuadratic => CostSpec::InverseQuadratic,
            CostForm::ExpMu => {
                CostSpec::ExpMu { mu: self.cost.mu.ok_or_else(|| ConfigError::Invalid("cost.mu is required".into()))? }
            }
        };
        let k = &self.kernel;
        Ok(ProblemSpec {
            n_regimes: n,
            dynamics,
            profit,
            cost,
            beta: self.discount.beta,
            kernel: KernelFamily {
                switch: k.p.clone(),
                m_lo: k.m_lo,
                m_hi: k.m_hi,
                jump_std: k.jump_std,
                shift_enabled: k.enabled,
            },
        })
    }

    pub fn validated_spec(&self) -> Result<ValidatedSpec, ConfigError> {
        Ok(validate_spec(self.spec()?)?)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Ok(Grid::new(self.grid.x_lo, self.grid.x_hi, self.grid.n, self.grid.dt)?)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solve;
        SolverConfig {
            tol: s.tol,
            max_iter: s.max_iter,
            n_gh_step: s.n_gh_step,
            n_gh_jump: s.n_gh_jump,
            m_scan: s.m_scan,
        }
    }

    pub fn mc_config(&self) -> McConfig {
        let m = &self.mc;
        McConfig { n_paths: m.n_paths, horizon: m.horizon, dt: m.dt, seed: m.seed, record_paths: m.record_paths }
    }

    pub fn audit_config(&self) -> AuditConfig {
        let a = &self.audit;
        AuditConfig {
            n_states: a.n_states,
            n_kernels: a.n_kernels,
            n_paths: a.n_paths,
            max_steps: a.max_steps,
            seed: self.mc.seed,
            ..AuditConfig::default()
        }
    }

    pub fn fseries_config(&self) -> FSeriesConfig {
        FSeriesConfig { n_points: self.fseries.n_points, ..FSeriesConfig::default() }
    }

    pub fn start(&self) -> Result<(RegimeId, f64), ConfigError> {
        let s = &self.strategy;
        if s.start_regime >= self.regimes.count {
            return Err(ConfigError::Invalid(format!("strategy.start_regime = {} out of range", s.start_regime)));
        }
        Ok((RegimeId(s.start_regime), s.start_x))
    }
}

/// SHA-256 of the canonical TOML rendering of the spec.
pub fn spec_hash(spec: &ProblemSpec) -> String {
    let canonical = toml::to_string(spec).expect("problem specs serialize to TOML");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::arctan_example;

    pub(crate) const EXAMPLE: &str = r#"
[regimes]
count = 2

[dynamics]
b.0 = 0.0
b.1 = 0.1
sigma.0 = 0.2
sigma.1 = 0.3

[profit]
form = "arctan"

[cost]
form = "inverse_quadratic"

[kernel]
p = [[0.0, 1.0], [1.0, 0.0]]
m_lo = -1.0
m_hi = 1.0
jump_std = 1.0

[discount]
beta = 0.5
"#;

    #[test]
    fn example_file_is_the_example_spec() {
        let cfg = ProblemConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.spec().unwrap(), arctan_example());
        assert_eq!(cfg.grid, GridSection::default());
        assert!(cfg.validated_spec().is_ok());
    }

    #[test]
    fn unknown_keys_and_bad_regimes_are_rejected() {
        let bad = EXAMPLE.replace("beta = 0.5", "beta = 0.5\ngamma = 1.0");
        assert!(matches!(ProblemConfig::from_toml(&bad), Err(ConfigError::Parse(_))));
        let bad = EXAMPLE.replace("b.1 = 0.1", "b.2 = 0.1");
        assert!(matches!(ProblemConfig::from_toml(&bad).unwrap().spec(), Err(ConfigError::Invalid(_))));
        let bad = EXAMPLE.replace("form = \"arctan\"", "form = \"exp_scaled\"");
        assert!(matches!(ProblemConfig::from_toml(&bad).unwrap().spec(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_file() {
        let err = load_config(Path::new("/nonexistent/problem.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::FileNotFound(_)));
    }

    #[test]
    fn overrides_replace_values() {
        let mut cfg = ProblemConfig::from_toml(EXAMPLE).unwrap();
        cfg.apply(&Overrides { tol: Some(1e-9), n_points: Some(11), seed: Some(5), ..Overrides::default() });
        assert_eq!(cfg.solver_config().tol, 1e-9);
        assert_eq!(cfg.grid().unwrap().n_points, 11);
        assert_eq!(cfg.mc_config().seed, 5);
    }

    #[test]
    fn hash_tracks_the_spec() {
        let a = arctan_example();
        let mut b = a.clone();
        assert_eq!(spec_hash(&a), spec_hash(&b));
        b.beta = 0.6;
        assert_ne!(spec_hash(&a), spec_hash(&b));
        assert_eq!(spec_hash(&a).len(), 64);
    }
}
