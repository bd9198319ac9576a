//! Problem instance: regimes, diffusion coefficients, profit and switching
//! cost, discount rate and the parametric family of impulse kernels.
//!
//! Every function family is a closed-form enumeration so that the standing
//! hypotheses (Lipschitz/growth bounds, boundedness, integrability) can be
//! decided from the coefficients alone.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a technology (regime) in the finite set `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegimeId(pub usize);

impl RegimeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for RegimeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Drift or volatility of one regime as a function of the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coefficient {
    Constant(f64),
    Affine { intercept: f64, slope: f64 },
}

impl Coefficient {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Affine { intercept, slope } => intercept + slope * x,
        }
    }

    /// `(intercept, slope)`.
    pub fn parts(&self) -> (f64, f64) {
        match *self {
            Coefficient::Constant(c) => (c, 0.0),
            Coefficient::Affine { intercept, slope } => (intercept, slope),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Coefficient::Constant(c) => Some(c),
            Coefficient::Affine { intercept, slope: 0.0 } => Some(intercept),
            Coefficient::Affine { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub drift: Vec<Coefficient>,
    pub vol: Vec<Coefficient>,
    /// Declared Lipschitz / linear-growth constant `K`.
    pub lipschitz_k: f64,
}

impl DynamicsSpec {
    /// Constant coefficients for every regime, with `K` set to the smallest
    /// value satisfying both the Lipschitz and the growth condition.
    pub fn constant(drift: &[f64], vol: &[f64]) -> Self {
        let mut dynamics = DynamicsSpec {
            drift: drift.iter().map(|&b| Coefficient::Constant(b)).collect(),
            vol: vol.iter().map(|&s| Coefficient::Constant(s)).collect(),
            lipschitz_k: 0.0,
        };
        dynamics.lipschitz_k = dynamics.minimal_k();
        dynamics
    }

    /// Smallest `K` for which the Lipschitz and growth conditions hold.
    pub fn minimal_k(&self) -> f64 {
        self.drift
            .iter()
            .zip(&self.vol)
            .map(|(b, s)| {
                let (b0, b1) = b.parts();
                let (s0, s1) = s.parts();
                let lipschitz = b1.abs() + s1.abs();
                // sup_x ((b0+b1 x)^2 + (s0+s1 x)^2) / (1+x^2) is the largest
                // eigenvalue of the 2x2 form [[b0²+s0², B], [B, b1²+s1²]].
                let a = b0 * b0 + s0 * s0;
                let c = b1 * b1 + s1 * s1;
                let bb = b0 * b1 + s0 * s1;
                let growth_sq = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + bb * bb).sqrt();
                lipschitz.max(growth_sq.sqrt())
            })
            .fold(0.0, f64::max)
    }
}

/// Net profit rate `f(i, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProfitSpec {
    /// `arctan(x) + offset`; nonnegative iff `offset >= π/2`.
    Arctan { offset: f64 },
    /// `eta · e^x`, unbounded.
    ExpScaled { eta: f64 },
}

impl ProfitSpec {
    pub fn arctan() -> Self {
        ProfitSpec::Arctan { offset: FRAC_PI_2 }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ProfitSpec::Arctan { offset } => x.atan() + offset,
            ProfitSpec::ExpScaled { eta } => eta * x.exp(),
        }
    }

    pub fn bounded(&self) -> bool {
        matches!(self, ProfitSpec::Arctan { .. })
    }

    /// `‖f‖_∞`, when finite.
    pub fn sup_norm(&self) -> Option<f64> {
        match *self {
            ProfitSpec::Arctan { offset } => Some(offset + FRAC_PI_2),
            ProfitSpec::ExpScaled { .. } => None,
        }
    }
}

/// Switching cost `c(i, x, j, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostSpec {
    /// `1 − 1/(1 + (y − x)²)`.
    InverseQuadratic,
    /// `exp(x + μ(y − x))`.
    ExpMu { mu: f64 },
}

impl CostSpec {
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            CostSpec::InverseQuadratic => Some(1.0),
            CostSpec::ExpMu { .. } => None,
        }
    }
}

/// The kernel family `M`: for every `(i, x)` the Dirac mass `δ(i,x)` plus the
/// Gaussian mean shifts `p[i][·] ⊗ N(x + m, jump_std²)`, `m ∈ [m_lo, m_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFamily {
    pub switch: Vec<Vec<f64>>,
    pub m_lo: f64,
    pub m_hi: f64,
    pub jump_std: f64,
    /// When false only the Dirac member remains and intervention is void.
    pub shift_enabled: bool,
}

impl KernelFamily {
    /// Two regimes, `p` the swap matrix.
    pub fn swap(m_lo: f64, m_hi: f64) -> Self {
        KernelFamily { switch: vec![vec![0.0, 1.0], vec![1.0, 0.0]], m_lo, m_hi, jump_std: 1.0, shift_enabled: true }
    }

    pub fn includes_dirac(&self) -> bool {
        true
    }

    pub fn contains_mean(&self, m: f64) -> bool {
        m >= self.m_lo && m <= self.m_hi
    }

    /// Regimes reachable from `i` by a non-Dirac member, with their weights.
    pub fn targets(&self, i: RegimeId) -> impl Iterator<Item = (RegimeId, f64)> + '_ {
        self.switch[i.0].iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (RegimeId(j), p))
    }

    /// Most likely target regime from `i` (smallest index on ties).
    pub fn modal_target(&self, i: RegimeId) -> RegimeId {
        let mut best = (i, 0.0);
        for (j, p) in self.targets(i) {
            if p > best.1 {
                best = (j, p);
            }
        }
        best.0
    }

    /// The single reachable target, if row `i` is deterministic.
    pub fn deterministic_target(&self, i: RegimeId) -> Option<RegimeId> {
        let mut it = self.targets(i);
        match (it.next(), it.next()) {
            (Some((j, _)), None) => Some(j),
            _ => None,
        }
    }
}

/// A member of the kernel family at a given `(i, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelMember {
    Dirac,
    Shift { m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n_regimes: usize,
    pub dynamics: DynamicsSpec,
    pub profit: ProfitSpec,
    pub cost: CostSpec,
    pub beta: f64,
    pub kernel: KernelFamily,
}

impl ProblemSpec {
    pub fn regimes(&self) -> impl Iterator<Item = RegimeId> {
        (0..self.n_regimes).map(RegimeId)
    }

    #[inline]
    pub fn drift(&self, i: RegimeId, x: f64) -> f64 {
        self.dynamics.drift[i.0].eval(x)
    }

    #[inline]
    pub fn vol(&self, i: RegimeId, x: f64) -> f64 {
        self.dynamics.vol[i.0].eval(x)
    }

    /// `f(i, x)`. The profit families do not depend on the regime.
    #[inline]
    pub fn profit(&self, _i: RegimeId, x: f64) -> f64 {
        self.profit.eval(x)
    }

    /// `c(i, x, j, y)`, exactly zero when `(j, y) = (i, x)`.
    #[inline]
    pub fn cost(&self, i: RegimeId, x: f64, j: RegimeId, y: f64) -> f64 {
        if i == j && x == y {
            return 0.0;
        }
        match self.cost {
            CostSpec::InverseQuadratic => {
                let d = y - x;
                1.0 - 1.0 / (1.0 + d * d)
            }
            CostSpec::ExpMu { mu } => (x + mu * (y - x)).exp(),
        }
    }

    /// Density in `y` of the shift member with mean offset `m`, restricted to
    /// target regime `j`: `p[i][j] · φ((y − x − m)/s)/s`.
    pub fn kernel_density(&self, m: f64, i: RegimeId, x: f64, j: RegimeId) -> Result<KernelDensity, ModelError> {
        if !self.kernel.contains_mean(m) {
            return Err(ModelError::ParameterOutOfBox { m, lo: self.kernel.m_lo, hi: self.kernel.m_hi });
        }
        Ok(KernelDensity { weight: self.kernel.switch[i.0][j.0], mean: x + m, std: self.kernel.jump_std })
    }

    /// `max_i (b_i + σ_i²/2)` for constant coefficients.
    pub fn exp_growth_rate(&self) -> Option<f64> {
        let mut rate = f64::NEG_INFINITY;
        for (b, s) in self.dynamics.drift.iter().zip(&self.dynamics.vol) {
            let b = b.constant_value()?;
            let s = s.constant_value()?;
            rate = rate.max(b + 0.5 * s * s);
        }
        Some(rate)
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.dynamics.drift.iter().chain(&self.dynamics.vol).all(|c| c.constant_value().is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDensity {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl KernelDensity {
    pub fn at(&self, y: f64) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let z = (y - self.mean) / self.std;
        self.weight * (-0.5 * z * z).exp() / (self.std * (2.0 * PI).sqrt())
    }
}

/// One failed standing condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveBeta {
        beta: f64,
    },
    IntegrabilityViolation {
        beta: f64,
        growth: f64,
    },
    /// Exponential profit needs constant coefficients to decide integrability.
    UnsupportedExpDynamics,
    BadStochasticMatrix {
        row: usize,
        reason: String,
    },
    EmptyKernelBox {
        m_lo: f64,
        m_hi: f64,
    },
    NonPositiveJumpStd {
        jump_std: f64,
    },
    NegativeVolatility {
        regime: usize,
    },
    NegativeProfit {
        offset: f64,
    },
    NegativeEta {
        eta: f64,
    },
    LipschitzViolation {
        regime: usize,
        required: f64,
        declared: f64,
    },
    GrowthViolation {
        regime: usize,
    },
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NoRegimes,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveBeta { beta } => write!(f, "NonPositiveBeta: beta = {beta}"),
            Violation::IntegrabilityViolation { beta, growth } => {
                write!(f, "IntegrabilityViolation: beta = {beta} must exceed max(b_i + sigma_i^2/2) = {growth}")
            }
            Violation::UnsupportedExpDynamics => {
                write!(f, "IntegrabilityViolation: exponential profit requires constant drift and volatility")
            }
            Violation::BadStochasticMatrix { row, reason } => {
                write!(f, "BadStochasticMatrix: row {row}: {reason}")
            }
            Violation::EmptyKernelBox { m_lo, m_hi } => {
                write!(f, "EmptyKernelBox: m_lo = {m_lo} > m_hi = {m_hi}")
            }
            Violation::NonPositiveJumpStd { jump_std } => {
                write!(f, "NonPositiveJumpStd: jump_std = {jump_std}")
            }
            Violation::NegativeVolatility { regime } => {
                write!(f, "NegativeVolatility: regime {regime}")
            }
            Violation::NegativeProfit { offset } => {
                write!(f, "NegativeProfit: arctan offset {offset} < pi/2")
            }
            Violation::NegativeEta { eta } => write!(f, "NegativeProfit: eta = {eta}"),
            Violation::LipschitzViolation { regime, required, declared } => {
                write!(f, "LipschitzViolation: regime {regime} needs K >= {required}, declared {declared}")
            }
            Violation::GrowthViolation { regime } => {
                write!(f, "GrowthViolation: regime {regime}")
            }
            Violation::DimensionMismatch { what, expected, found } => {
                write!(f, "DimensionMismatch: {what} has {found} entries, expected {expected}")
            }
            Violation::NoRegimes => write!(f, "NoRegimes: at least one regime is required"),
        }
    }
}

/// Every violated condition of a rejected spec.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid problem spec:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl ValidationReport {
    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("ParameterOutOfBox: m = {m} outside [{lo}, {hi}]")]
    ParameterOutOfBox { m: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
}

/// A spec that passed [`validate_spec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec(ProblemSpec);

impl ValidatedSpec {
    pub fn into_inner(self) -> ProblemSpec {
        self.0
    }
}

impl Deref for ValidatedSpec {
    type Target = ProblemSpec;

    fn deref(&self) -> &ProblemSpec {
        &self.0
    }
}

const ROW_SUM_TOL: f64 = 1e-12;
const K_SLACK: f64 = 1e-12;

pub fn validate_spec(spec: ProblemSpec) -> Result<ValidatedSpec, ValidationReport> {
    let mut violations = Vec::new();
    let n = spec.n_regimes;
    if n == 0 {
        violations.push(Violation::NoRegimes);
    }
    for (what, found) in [
        ("dynamics.drift", spec.dynamics.drift.len()),
        ("dynamics.vol", spec.dynamics.vol.len()),
        ("kernel.switch", spec.kernel.switch.len()),
    ] {
        if found != n {
            violations.push(Violation::DimensionMismatch { what, expected: n, found });
        }
    }
    if !violations.is_empty() {
        return Err(ValidationReport { violations });
    }

    if !(spec.beta > 0.0) {
        violations.push(Violation::NonPositiveBeta { beta: spec.beta });
    }

    let k = spec.dynamics.lipschitz_k;
    for (r, (b, s)) in spec.dynamics.drift.iter().zip(&spec.dynamics.vol).enumerate() {
        let (b0, b1) = b.parts();
        let (s0, s1) = s.parts();
        // An affine volatility with nonzero slope is negative somewhere on the
        // line; it is checked against the grid at solve time instead.
        if s1 == 0.0 && s0 < 0.0 {
            violations.push(Violation::NegativeVolatility { regime: r });
        }
        let lipschitz = b1.abs() + s1.abs();
        if lipschitz > k + K_SLACK {
            violations.push(Violation::LipschitzViolation { regime: r, required: lipschitz, declared: k });
        }
        // (b0+b1 x)² + (s0+s1 x)² ≤ K²(1+x²) for all x.
        let a = b1 * b1 + s1 * s1 - k * k;
        let c = b0 * b0 + s0 * s0 - k * k;
        let bb = b0 * b1 + s0 * s1;
        let tol = K_SLACK * (1.0 + k * k);
        if a > tol || c > tol || bb * bb > a * c + tol {
            violations.push(Violation::GrowthViolation { regime: r });
        }
    }

    match spec.profit {
        ProfitSpec::Arctan { offset } => {
            if offset < FRAC_PI_2 {
                violations.push(Violation::NegativeProfit { offset });
            }
        }
        ProfitSpec::ExpScaled { eta } => {
            if !(eta >= 0.0) {
                violations.push(Violation::NegativeEta { eta });
            }
            match spec.exp_growth_rate() {
                Some(growth) => {
                    if !(spec.beta - growth > 0.0) {
                        violations.push(Violation::IntegrabilityViolation { beta: spec.beta, growth });
                    }
                }
                None => violations.push(Violation::UnsupportedExpDynamics),
            }
        }
    }

    let kernel = &spec.kernel;
    for (r, row) in kernel.switch.iter().enumerate() {
        if row.len() != n {
            violations.push(Violation::BadStochasticMatrix {
                row: r,
                reason: format!("{} columns, expected {n}", row.len()),
            });
            continue;
        }
        if row.iter().any(|&p| !(p >= 0.0)) {
            violations.push(Violation::BadStochasticMatrix { row: r, reason: "negative entry".into() });
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(Violation::BadStochasticMatrix { row: r, reason: format!("row sums to {sum}") });
        } else if kernel.shift_enabled && row[r] != 0.0 {
            violations.push(Violation::BadStochasticMatrix { row: r, reason: "nonzero diagonal".into() });
        }
    }
    if !(kernel.m_lo <= kernel.m_hi) {
        violations.push(Violation::EmptyKernelBox { m_lo: kernel.m_lo, m_hi: kernel.m_hi });
    }
    if !(kernel.jump_std > 0.0) {
        violations.push(Violation::NonPositiveJumpStd { jump_std: kernel.jump_std });
    }

    if violations.is_empty() {
        Ok(ValidatedSpec(spec))
    } else {
        Err(ValidationReport { violations })
    }
}

/// The bounded worked example: arctan profit, inverse-quadratic switching
/// cost, swap kernel with jump means in `[-1, 1]`. The old technology 0 has
/// lower drift and volatility than the new technology 1.
pub fn arctan_example() -> ProblemSpec {
    ProblemSpec {
        n_regimes: 2,
        dynamics: DynamicsSpec::constant(&[0.0, 0.1], &[0.2, 0.3]),
        profit: ProfitSpec::arctan(),
        cost: CostSpec::InverseQuadratic,
        beta: 0.5,
        kernel: KernelFamily::swap(-1.0, 1.0),
    }
}

/// The exponential-profit example with deterministic cadence.
pub fn exp_example(eta: f64, mu: f64) -> ProblemSpec {
    ProblemSpec {
        n_regimes: 2,
        dynamics: DynamicsSpec::constant(&[0.1, 0.15], &[0.2, 0.3]),
        profit: ProfitSpec::ExpScaled { eta },
        cost: CostSpec::ExpMu { mu },
        beta: 0.5,
        kernel: KernelFamily::swap(-1.0, 1.0),
    }
}
