//! Per-cycle profit/cost recurrences for a fixed impulse cadence.
//!
//! For the strategy "impulse every `t0` with jump mean `m`" the expected gain
//! splits by cycle: `F1(l)` is the discounted profit earned during cycle `l`
//! and `F3(l)` the discounted cost of the `l`-th impulse. With
//!
//! ```text
//! D[G](i,x) = e^{−β·t0} E[G(i, x + b_i·t0 + σ_i·√t0·Z)]
//! J[G](i,x) = Σ_j p[i][j] E[G(j, x + m + s·Z)]
//! ```
//!
//! they satisfy `F1(l) = D[J[F1(l−1)]]`, `F3(1) = D[J[c]]` and
//! `F3(l) = D[J[F3(l−1)]]`, starting from
//! `F1(0)(i,x) = ∫₀^{t0} e^{−βt} E[f(x + b_i·t + σ_i·W_t)] dt`.
//! Each function of `(i, x)` is tabulated on a fine grid around the start
//! state and read back by four-point cubic interpolation.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Grid, Tails};
use crate::model::{CostSpec, ProblemSpec, RegimeId};
use crate::quadrature::{GaussHermite, GaussLegendre};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FSeriesError {
    #[error("UnsupportedDynamics: the recurrences need constant drift and volatility")]
    UnsupportedDynamics,
    #[error("UnboundedTailBound: per-cycle growth factor {ratio} is not below 1")]
    UnboundedTailBound { ratio: f64 },
    #[error("invalid cadence: {0}")]
    InvalidCadence(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FSeriesConfig {
    /// Tabulation grid spans `[x0 − below, x0 + above]`.
    pub below: f64,
    pub above: f64,
    pub n_points: usize,
    pub n_gh: usize,
    /// Gauss–Legendre nodes in time for `F1(0)`.
    pub n_gl: usize,
}

impl Default for FSeriesConfig {
    fn default() -> Self {
        FSeriesConfig { below: 20.0, above: 30.0, n_points: 2001, n_gh: 96, n_gl: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    /// `(‖f‖ + ‖c‖)·q^{L+1}/(1−q)` for bounded profit and cost.
    Geometric,
    /// Growth-adjusted geometric bound for exponential profit or cost.
    Growth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FSeries {
    pub order: usize,
    pub start: (RegimeId, f64),
    pub t0: f64,
    pub m: f64,
    /// `F1(0..=L)` at the start state.
    pub f1: Vec<f64>,
    /// `F3(1..=L)` at the start state; `f3[k]` is `F3(k+1)`.
    pub f3: Vec<f64>,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub tail_kind: TailKind,
    pub q: f64,
    f_sup: Option<f64>,
    c_sup: Option<f64>,
}

/// A failed term of the geometric majorants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MajorantViolation {
    F1 { l: usize, value: f64, bound: f64 },
    F3 { l: usize, value: f64, bound: f64 },
}

impl FSeries {
    /// Terms breaking `|F1(l)| ≤ ‖f‖·qˡ` or `|F3(l)| ≤ ‖c‖·qˡ`. Empty when
    /// profit or cost is unbounded, since no such majorant exists.
    pub fn majorant_violations(&self) -> Vec<MajorantViolation> {
        let mut out = Vec::new();
        if let Some(fs) = self.f_sup {
            for (l, &v) in self.f1.iter().enumerate() {
                let bound = fs * self.q.powi(l as i32);
                if v.abs() > bound {
                    out.push(MajorantViolation::F1 { l, value: v, bound });
                }
            }
        }
        if let Some(cs) = self.c_sup {
            for (k, &v) in self.f3.iter().enumerate() {
                let l = k + 1;
                let bound = cs * self.q.powi(l as i32);
                if v.abs() > bound {
                    out.push(MajorantViolation::F3 { l, value: v, bound });
                }
            }
        }
        out
    }

    /// Whether the bounded-instance majorants apply at all.
    pub fn has_majorants(&self) -> bool {
        self.f_sup.is_some() && self.c_sup.is_some()
    }
}

pub fn f_series(
    spec: &ProblemSpec,
    start: (RegimeId, f64),
    t0: f64,
    m: f64,
    order: usize,
    cfg: &FSeriesConfig,
) -> Result<FSeries, FSeriesError> {
    if !spec.has_constant_coefficients() {
        return Err(FSeriesError::UnsupportedDynamics);
    }
    if !(t0 > 0.0) {
        return Err(FSeriesError::InvalidCadence(format!("t0 = {t0} must be positive")));
    }
    if !spec.kernel.contains_mean(m) {
        return Err(FSeriesError::InvalidCadence(format!(
            "m = {m} outside [{}, {}]",
            spec.kernel.m_lo, spec.kernel.m_hi
        )));
    }
    let (i0, x0) = start;
    let q = (-spec.beta * t0).exp();
    let f_sup = spec.profit.sup_norm();
    let c_sup = spec.cost.sup_norm();
    let (tail_bound, tail_kind) = tail(spec, x0, t0, m, q, order, f_sup, c_sup)?;

    let grid = Grid::new(x0 - cfg.below, x0 + cfg.above, cfg.n_points, t0)
        .map_err(|e| FSeriesError::InvalidCadence(e.to_string()))?;
    let k0 = grid.nearest(x0);
    let ops = Operators {
        spec,
        grid,
        tails: if f_sup.is_some() { Tails::Flat } else { Tails::Exponential },
        gh: GaussHermite::new(cfg.n_gh),
        t0,
        m,
        q,
    };

    let at_start = |field: &[Vec<f64>]| {
        if (grid.x(k0) - x0).abs() < 1e-12 * x0.abs().max(1.0) {
            field[i0.0][k0]
        } else {
            cubic_interp(&grid, &field[i0.0], x0, ops.tails)
        }
    };

    let gl = GaussLegendre::new(cfg.n_gl).mapped(0.0, t0);
    let mut profit = ops.tabulate(|i, x| {
        let b = spec.drift(i, x);
        let s = spec.vol(i, x);
        gl.iter()
            .map(|&(t, wt)| {
                let e = ops.gh.expect(x + b * t, s * t.sqrt(), |y| spec.profit(i, y));
                wt * (-spec.beta * t).exp() * e
            })
            .sum()
    });
    let mut f1 = vec![at_start(&profit)];
    let mut cost: Option<Vec<Vec<f64>>> = None;
    let mut f3 = Vec::with_capacity(order);
    for _ in 1..=order {
        profit = ops.diffuse(&ops.jump(&profit));
        f1.push(at_start(&profit));
        let next = match &cost {
            None => ops.diffuse(&ops.first_cost()),
            Some(c) => ops.diffuse(&ops.jump(c)),
        };
        f3.push(at_start(&next));
        cost = Some(next);
    }
    let partial_sum = f1.iter().sum::<f64>() - f3.iter().sum::<f64>();
    Ok(FSeries { order, start, t0, m, f1, f3, partial_sum, tail_bound, tail_kind, q, f_sup, c_sup })
}

#[allow(clippy::too_many_arguments)]
fn tail(
    spec: &ProblemSpec,
    x0: f64,
    t0: f64,
    m: f64,
    q: f64,
    order: usize,
    f_sup: Option<f64>,
    c_sup: Option<f64>,
) -> Result<(f64, TailKind), FSeriesError> {
    let next = (order + 1) as i32;
    if let (Some(fs), Some(cs)) = (f_sup, c_sup) {
        // F1(l) ≤ ‖f‖·qˡ·(1−q)/β, which is within ‖f‖·qˡ when 1−q ≤ β.
        let profit_scale = ((1.0 - q) / spec.beta).max(1.0);
        return Ok(((fs * profit_scale + cs) * q.powi(next) / (1.0 - q), TailKind::Geometric));
    }
    let s = spec.kernel.jump_std;
    let beta = spec.beta;
    let jump = (m + 0.5 * s * s).exp();
    let mut diffuse_growth: f64 = 0.0;
    let mut cycle_profit: f64 = 0.0;
    for i in spec.regimes() {
        let g = spec.drift(i, x0) + 0.5 * spec.vol(i, x0).powi(2);
        diffuse_growth = diffuse_growth.max((g * t0).exp());
        let rate = g - beta;
        let a = if rate.abs() < 1e-12 { t0 } else { ((rate * t0).exp() - 1.0) / rate };
        cycle_profit = cycle_profit.max(a);
    }
    let exp_ratio = q * diffuse_growth * jump.max(1.0);
    let geometric = |ratio: f64, scale: f64| -> Result<f64, FSeriesError> {
        if ratio < 1.0 {
            Ok(scale * ratio.powi(next) / (1.0 - ratio))
        } else {
            Err(FSeriesError::UnboundedTailBound { ratio })
        }
    };
    let profit = match f_sup {
        Some(fs) => fs * ((1.0 - q) / beta).max(1.0) * q.powi(next) / (1.0 - q),
        None => geometric(exp_ratio, spec.profit.eval(x0) * cycle_profit)?,
    };
    let cost = match (c_sup, spec.cost) {
        (Some(cs), _) => cs * q.powi(next) / (1.0 - q),
        (None, CostSpec::ExpMu { mu }) => {
            let per = (x0 + mu * m + 0.5 * mu * mu * s * s).exp() / jump.max(1.0);
            geometric(exp_ratio, per)?
        }
        (None, CostSpec::InverseQuadratic) => unreachable!("inverse-quadratic cost is bounded"),
    };
    Ok((profit + cost, TailKind::Growth))
}

struct Operators<'a> {
    spec: &'a ProblemSpec,
    grid: Grid,
    tails: Tails,
    gh: GaussHermite,
    t0: f64,
    m: f64,
    q: f64,
}

impl Operators<'_> {
    fn tabulate(&self, f: impl Fn(RegimeId, f64) -> f64 + Sync) -> Vec<Vec<f64>> {
        self.spec
            .regimes()
            .map(|i| (0..self.grid.n_points).into_par_iter().map(|k| f(i, self.grid.x(k))).collect())
            .collect()
    }

    fn diffuse(&self, g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let sqrt_t0 = self.t0.sqrt();
        self.tabulate(|i, x| {
            let mean = x + self.spec.drift(i, x) * self.t0;
            let std = self.spec.vol(i, x) * sqrt_t0;
            self.q * self.gh.expect(mean, std, |y| cubic_interp(&self.grid, &g[i.0], y, self.tails))
        })
    }

    fn jump(&self, g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = self.spec.kernel.jump_std;
        self.tabulate(|i, x| {
            self.spec
                .kernel
                .targets(i)
                .map(|(j, p)| p * self.gh.expect(x + self.m, s, |y| cubic_interp(&self.grid, &g[j.0], y, self.tails)))
                .sum()
        })
    }

    /// `J[c]`: expected cost of an impulse from `(i, x)`.
    fn first_cost(&self) -> Vec<Vec<f64>> {
        let s = self.spec.kernel.jump_std;
        self.tabulate(|i, x| {
            self.spec
                .kernel
                .targets(i)
                .map(|(j, p)| p * self.gh.expect(x + self.m, s, |y| self.spec.cost(i, x, j, y)))
                .sum()
        })
    }
}

/// Four-point Lagrange interpolation; beyond the grid the field is held flat
/// or continued exponentially from the end value.
fn cubic_interp(grid: &Grid, v: &[f64], x: f64, tails: Tails) -> f64 {
    let n = grid.n_points;
    if x <= grid.x_lo || x >= grid.x_hi {
        return grid.interp_with(v, x, tails);
    }
    let t = (x - grid.x_lo) / grid.spacing();
    let k = (t.floor() as usize).clamp(1, n - 3);
    let u = t - k as f64;
    let (a, b, c, d) = (v[k - 1], v[k], v[k + 1], v[k + 2]);
    let w0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
    let w1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
    let w2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
    let w3 = (u + 1.0) * u * (u - 1.0) / 6.0;
    w0 * a + w1 * b + w2 * c + w3 * d
}
