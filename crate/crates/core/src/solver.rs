//! Grid solver for the impulse-control value functions.
//!
//! The continuous problem is replaced by a Markov chain on the grid: over a
//! step `dt` the state moves by one Euler step whose normal increment is
//! integrated by Gauss–Hermite, and off-grid values are read by linear
//! interpolation. On that chain the solver iterates
//!
//! ```text
//! m*ρ⁺(i,x) = sup_m Σ_j p[i][j] E[ −c(i,x,j,Y) + ρ⁺(j,Y) ],  Y ~ N(x+m, s²)
//! ρ⁺(i,x)   ← f(i,x)·w(dt) + e^{−β·dt} E[ max(ρ⁺, m*ρ⁺)(i, Y_dt) ]
//! ```
//!
//! from the never-impulse value until the sup-norm change drops below `tol`.
//! For bounded profit the map is a contraction with factor `e^{−β·dt}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::discount_weight;
use crate::grid::{Grid, Tails};
use crate::model::{KernelMember, ProblemSpec, RegimeId, ValidatedSpec};
use crate::quadrature::GaussHermite;

/// One value per regime per grid point.
pub type Field = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("NoConvergence: residual {residual:e} after {iterations} sweeps")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Diverged: value fields stopped being finite after {iterations} sweeps (the impulse value is unbounded)")]
    Diverged { iterations: usize },
    #[error("NegativeVolatility: sigma({regime}, {x}) < 0 on the grid")]
    NegativeVolatility { regime: usize, x: f64 },
    #[error("field shape does not match the grid")]
    ShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sup-norm stopping tolerance on successive iterates.
    pub tol: f64,
    pub max_iter: usize,
    /// Gauss–Hermite nodes for the Euler increment.
    pub n_gh_step: usize,
    /// Gauss–Hermite nodes for the impulse jump.
    pub n_gh_jump: usize,
    /// Equally spaced jump means scanned before the golden-section refinement.
    pub m_scan: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-7, max_iter: 100_000, n_gh_step: 16, n_gh_jump: 48, m_scan: 33 }
    }
}

impl SolverConfig {
    /// Tolerance used by the complementarity and audit checks.
    pub fn tol_c(&self) -> f64 {
        10.0 * self.tol
    }
}

/// Result of the intervention operator at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervention {
    /// `m*ρ⁺(i,x)`, or `-∞` when the family has no shift member.
    pub value: f64,
    pub best_m: f64,
    pub best_j: RegimeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFields {
    pub grid: Grid,
    pub rho_plus: Field,
    pub m_star: Field,
    pub rho: Field,
    pub argmax_m: Field,
    pub argmax_j: Vec<Vec<RegimeId>>,
    /// Sweeps performed, including the no-impulse warm start.
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
    /// Smallest pointwise increment seen over all sweeps; nonnegative up to
    /// the tolerance of the starting field when the iteration is monotone.
    pub min_sweep_delta: f64,
}

impl ValueFields {
    pub fn n_regimes(&self) -> usize {
        self.rho_plus.len()
    }

    pub fn intervention_enabled(&self) -> bool {
        self.m_star.iter().flatten().any(|v| v.is_finite())
    }
}

/// Sparse one-step transition matrix of the grid chain, one row per
/// `(regime, grid point)`.
#[derive(Debug, Clone)]
pub struct Transition {
    n_points: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl Transition {
    /// Rows sum to one under flat tails; exponential tails give rows summing
    /// to about `E[e^{ΔY}]` near the upper edge.
    pub fn build(spec: &ProblemSpec, grid: &Grid, rule: &GaussHermite, tails: Tails) -> Self {
        let n = grid.n_points;
        let dt = grid.dt;
        let sqrt_dt = dt.sqrt();
        let mut offsets = Vec::with_capacity(spec.n_regimes * n + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        let mut scratch: Vec<(u32, f64)> = Vec::new();
        for i in spec.regimes() {
            for g in 0..n {
                let x = grid.x(g);
                let mean = x + spec.drift(i, x) * dt;
                let std = spec.vol(i, x) * sqrt_dt;
                scratch.clear();
                for (z, w) in rule.iter() {
                    let (k, a, b) = grid.weights(mean + std * z, tails);
                    scratch.push((k as u32, w * a));
                    scratch.push((k as u32 + 1, w * b));
                }
                scratch.sort_by_key(|&(k, _)| k);
                let mut last: Option<u32> = None;
                for &(k, p) in &scratch {
                    if p == 0.0 {
                        continue;
                    }
                    if last == Some(k) {
                        *probs.last_mut().unwrap() += p;
                    } else {
                        cols.push(k);
                        probs.push(p);
                        last = Some(k);
                    }
                }
                offsets.push(cols.len());
            }
        }
        Transition { n_points: n, offsets, cols, probs }
    }

    /// Successor indices and probabilities of grid point `g` in regime `i`.
    #[inline]
    pub fn row(&self, i: RegimeId, g: usize) -> (&[u32], &[f64]) {
        let r = i.0 * self.n_points + g;
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[a..b], &self.probs[a..b])
    }

    #[inline]
    pub fn expect(&self, i: RegimeId, g: usize, values: &[f64]) -> f64 {
        let (cols, probs) = self.row(i, g);
        cols.iter().zip(probs).map(|(&k, &p)| p * values[k as usize]).sum()
    }
}

pub struct QviSolver<'a> {
    spec: &'a ValidatedSpec,
    grid: Grid,
    config: SolverConfig,
    transition: Transition,
    jump_rule: GaussHermite,
    tails: Tails,
    /// `f(i, x_g)·w(dt)`.
    running_profit: Field,
    gamma: f64,
}

impl<'a> QviSolver<'a> {
    pub fn new(spec: &'a ValidatedSpec, grid: Grid, config: SolverConfig) -> Result<Self, SolverError> {
        for i in spec.regimes() {
            for x in grid.points() {
                if spec.vol(i, x) < 0.0 {
                    return Err(SolverError::NegativeVolatility { regime: i.0, x });
                }
            }
        }
        let tails = tails_for(spec);
        let transition = Transition::build(spec, &grid, &GaussHermite::new(config.n_gh_step), tails);
        let w = discount_weight(spec.beta, grid.dt);
        let running_profit = spec.regimes().map(|i| grid.points().map(|x| spec.profit(i, x) * w).collect()).collect();
        Ok(QviSolver {
            spec,
            grid,
            config,
            transition,
            jump_rule: GaussHermite::new(config.n_gh_jump),
            tails,
            running_profit,
            gamma: (-spec.beta * grid.dt).exp(),
        })
    }

    pub fn spec(&self) -> &ValidatedSpec {
        self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn transition(&self) -> &Transition {
        &self.transition
    }

    /// `e^{−β·dt}`.
    pub fn discount(&self) -> f64 {
        self.gamma
    }

    pub fn running_profit(&self) -> &Field {
        &self.running_profit
    }

    pub fn tails(&self) -> Tails {
        self.tails
    }

    fn n_states(&self) -> usize {
        self.spec.n_regimes * self.grid.n_points
    }

    fn check_shape(&self, field: &Field) -> Result<(), SolverError> {
        if field.len() != self.spec.n_regimes || field.iter().any(|r| r.len() != self.grid.n_points) {
            return Err(SolverError::ShapeMismatch);
        }
        Ok(())
    }

    fn map_states<T: Send>(&self, f: impl Fn(RegimeId, usize) -> T + Sync + Send) -> Vec<Vec<T>> {
        let n = self.grid.n_points;
        let flat: Vec<T> = (0..self.n_states()).into_par_iter().map(|s| f(RegimeId(s / n), s % n)).collect();
        let mut it = flat.into_iter();
        (0..self.spec.n_regimes).map(|_| it.by_ref().take(n).collect()).collect()
    }

    /// `f·w(dt) + e^{−β·dt}·P v`.
    pub fn continuation_value(&self, v: &Field) -> Field {
        self.map_states(|i, g| self.running_profit[i.0][g] + self.gamma * self.transition.expect(i, g, &v[i.0]))
    }

    /// Value of never impulsing, by fixed-point iteration from zero.
    pub fn no_impulse_value(&self) -> Result<Field, SolverError> {
        self.no_impulse_sweeps().map(|(v, _)| v)
    }

    fn no_impulse_sweeps(&self) -> Result<(Field, usize), SolverError> {
        let mut v: Field = vec![vec![0.0; self.grid.n_points]; self.spec.n_regimes];
        let mut residual = f64::INFINITY;
        for k in 1..=self.config.max_iter {
            let next = self.continuation_value(&v);
            residual = sup_diff(&next, &v);
            v = next;
            if residual.is_nan() || residual == f64::INFINITY {
                return Err(SolverError::Diverged { iterations: k });
            }
            if residual < self.config.tol {
                return Ok((v, k));
            }
        }
        Err(SolverError::NoConvergence { iterations: self.config.max_iter, residual })
    }

    /// `-c(i,x,j,y) + φ(j,y)` integrated against one kernel member.
    pub fn intervention_integrand(&self, phi: &Field, i: RegimeId, x: f64, member: KernelMember) -> f64 {
        match member {
            KernelMember::Dirac => -self.spec.cost(i, x, i, x) + self.grid.interp_with(&phi[i.0], x, self.tails),
            KernelMember::Shift { m } => self.shift_integrand(phi, i, x, m),
        }
    }

    fn shift_integrand(&self, phi: &Field, i: RegimeId, x: f64, m: f64) -> f64 {
        let spec = self.spec;
        let s = spec.kernel.jump_std;
        let mean = x + m;
        let mut total = 0.0;
        for (j, p) in spec.kernel.targets(i) {
            let row = &phi[j.0];
            let e: f64 = self
                .jump_rule
                .iter()
                .map(|(z, w)| {
                    let y = mean + s * z;
                    w * (self.grid.interp_with(row, y, self.tails) - spec.cost(i, x, j, y))
                })
                .sum();
            total += p * e;
        }
        total
    }

    /// `m*ρ⁺(i,x)` with its maximizing jump mean and target regime.
    pub fn intervention_value(&self, phi: &Field, i: RegimeId, x: f64) -> Intervention {
        let kernel = &self.spec.kernel;
        let best_j = kernel.deterministic_target(i).unwrap_or_else(|| kernel.modal_target(i));
        if !kernel.shift_enabled || kernel.targets(i).next().is_none() {
            return Intervention { value: f64::NEG_INFINITY, best_m: f64::NAN, best_j: i };
        }
        let g = |m: f64| self.shift_integrand(phi, i, x, m);
        let (lo, hi) = (kernel.m_lo, kernel.m_hi);
        if hi <= lo {
            return Intervention { value: g(lo), best_m: lo, best_j };
        }
        let n_scan = self.config.m_scan.max(2);
        let step = (hi - lo) / (n_scan - 1) as f64;
        let mut best = (lo, g(lo));
        let mut best_k = 0;
        for k in 1..n_scan {
            let m = if k == n_scan - 1 { hi } else { lo + k as f64 * step };
            let v = g(m);
            if v > best.1 {
                best = (m, v);
                best_k = k;
            }
        }
        let a = if best_k == 0 { lo } else { lo + (best_k - 1) as f64 * step };
        let b = if best_k + 1 >= n_scan { hi } else { lo + (best_k + 1) as f64 * step };
        let (m_ref, v_ref) = golden_max(&g, a, b, 1e-10 * (hi - lo).max(1.0));
        if v_ref > best.1 {
            best = (m_ref, v_ref);
        }
        Intervention { value: best.1, best_m: best.0, best_j }
    }

    /// `m*ρ⁺` over the whole grid: (values, argmax m, argmax j).
    pub fn intervention_field(&self, phi: &Field) -> (Field, Field, Vec<Vec<RegimeId>>) {
        let cells = self.map_states(|i, g| self.intervention_value(phi, i, self.grid.x(g)));
        let m_star = cells.iter().map(|r| r.iter().map(|c| c.value).collect()).collect();
        let argmax_m = cells.iter().map(|r| r.iter().map(|c| c.best_m).collect()).collect();
        let argmax_j = cells.iter().map(|r| r.iter().map(|c| c.best_j).collect()).collect();
        (m_star, argmax_m, argmax_j)
    }

    /// One Bellman sweep: `f·w + e^{−β·dt}·P max(ρ⁺, m*ρ⁺)`.
    pub fn bellman_sweep(&self, rho_plus: &Field, m_star: &Field) -> Field {
        let best = pointwise_max(rho_plus, m_star);
        self.continuation_value(&best)
    }

    pub fn solve(&self) -> Result<ValueFields, SolverError> {
        let (start, warm) = self.no_impulse_sweeps()?;
        let mut fields = self.solve_from(start)?;
        fields.iterations += warm;
        Ok(fields)
    }

    /// Iterate from a given starting field.
    pub fn solve_from(&self, start: Field) -> Result<ValueFields, SolverError> {
        self.check_shape(&start)?;
        let mut rho_plus = start;
        let mut residual = f64::INFINITY;
        let mut min_delta = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.config.max_iter {
            let (m_star, _, _) = self.intervention_field(&rho_plus);
            let next = self.bellman_sweep(&rho_plus, &m_star);
            iterations += 1;
            let (sup, min) = diff_stats(&next, &rho_plus);
            residual = sup;
            min_delta = min_delta.min(min);
            rho_plus = next;
            if residual.is_nan() || residual == f64::INFINITY {
                return Err(SolverError::Diverged { iterations });
            }
            if residual < self.config.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SolverError::NoConvergence { iterations, residual });
        }
        let (m_star, argmax_m, argmax_j) = self.intervention_field(&rho_plus);
        let rho = pointwise_max(&rho_plus, &m_star);
        Ok(ValueFields {
            grid: self.grid,
            rho_plus,
            m_star,
            rho,
            argmax_m,
            argmax_j,
            iterations,
            residual,
            tol: self.config.tol,
            min_sweep_delta: min_delta,
        })
    }

    /// Complementarity residuals of the discrete QVI at every grid point.
    pub fn complementarity(&self, fields: &ValueFields) -> Complementarity {
        let cont = self.continuation_value(&fields.rho);
        let mut out = Complementarity {
            max_abs_min: 0.0,
            min_continuation_gap: f64::INFINITY,
            min_intervention_gap: f64::INFINITY,
        };
        for i in 0..fields.n_regimes() {
            for g in 0..self.grid.n_points {
                let rho = fields.rho[i][g];
                let d1 = rho - cont[i][g];
                let d2 = rho - fields.m_star[i][g];
                out.max_abs_min = out.max_abs_min.max(d1.min(d2).abs());
                out.min_continuation_gap = out.min_continuation_gap.min(d1);
                out.min_intervention_gap = out.min_intervention_gap.min(d2);
            }
        }
        out
    }
}

impl QviSolver<'_> {
    /// Structural checks every solve must pass.
    pub fn invariants(&self, fields: &ValueFields) -> Result<Invariants, SolverError> {
        self.check_shape(&fields.rho_plus)?;
        let v0 = self.no_impulse_value()?;
        let mut inv = Invariants {
            max_rho_mismatch: 0.0,
            min_dominance_gap: f64::INFINITY,
            min_rho_plus: f64::INFINITY,
            positivity_required: self.spec.regimes().all(|i| self.grid.points().all(|x| self.spec.profit(i, x) > 0.0)),
            complementarity: self.complementarity(fields),
            partition_ok: true,
            max_dirac_gap: 0.0,
            max_abs_rho_plus: 0.0,
        };
        for i in self.spec.regimes() {
            for g in 0..self.grid.n_points {
                let (rp, ms, r) = (fields.rho_plus[i.0][g], fields.m_star[i.0][g], fields.rho[i.0][g]);
                let want = if ms > rp { ms } else { rp };
                if r != want {
                    inv.max_rho_mismatch = inv.max_rho_mismatch.max((r - want).abs()).max(f64::MIN_POSITIVE);
                }
                inv.min_dominance_gap = inv.min_dominance_gap.min(rp - v0[i.0][g]);
                inv.min_rho_plus = inv.min_rho_plus.min(rp);
                inv.max_abs_rho_plus = inv.max_abs_rho_plus.max(rp.abs());
                let dirac = self.intervention_integrand(&fields.rho_plus, i, self.grid.x(g), KernelMember::Dirac);
                inv.max_dirac_gap = inv.max_dirac_gap.max((dirac - rp).abs());
            }
        }
        let region = crate::region::extract_regions(fields, 0.0);
        for i in self.spec.regimes() {
            let covered: usize = [crate::region::Label::I, crate::region::Label::C]
                .iter()
                .flat_map(|&l| region.runs(i, l))
                .map(|(a, b)| b - a + 1)
                .sum();
            inv.partition_ok &= covered == self.grid.n_points;
        }
        Ok(inv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invariants {
    /// Largest `|ρ − max(ρ⁺, m*ρ⁺)|`; exactly zero when consistent.
    pub max_rho_mismatch: f64,
    /// `min(ρ⁺ − v₀)` against the never-impulse value.
    pub min_dominance_gap: f64,
    pub min_rho_plus: f64,
    /// Whether `ρ⁺ > 0` is implied, i.e. the profit is positive on the grid.
    pub positivity_required: bool,
    pub complementarity: Complementarity,
    pub partition_ok: bool,
    /// Largest `|∫δ(−c+ρ⁺) − ρ⁺|` at grid points.
    pub max_dirac_gap: f64,
    pub max_abs_rho_plus: f64,
}

impl Invariants {
    pub fn rho_is_max(&self) -> bool {
        self.max_rho_mismatch == 0.0
    }

    pub fn dominates_no_impulse(&self, tol: f64) -> bool {
        self.min_dominance_gap >= -tol
    }

    pub fn positive(&self) -> bool {
        !self.positivity_required || self.min_rho_plus > 0.0
    }

    /// Round-off allowance for the Dirac identity.
    pub fn dirac_tolerance(&self) -> f64 {
        1e-12 * self.max_abs_rho_plus.max(1.0)
    }

    pub fn dirac_consistent(&self) -> bool {
        self.max_dirac_gap <= self.dirac_tolerance()
    }

    pub fn hold(&self, tol: f64, tol_c: f64) -> bool {
        self.rho_is_max()
            && self.dominates_no_impulse(tol)
            && self.positive()
            && self.complementarity.within(tol_c)
            && self.partition_ok
            && self.dirac_consistent()
    }
}

/// `min(ρ − [f·w + e^{−β·dt}Eρ], ρ − m*ρ⁺)` statistics over the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complementarity {
    pub max_abs_min: f64,
    pub min_continuation_gap: f64,
    pub min_intervention_gap: f64,
}

impl Complementarity {
    pub fn within(&self, tol_c: f64) -> bool {
        self.max_abs_min <= tol_c && self.min_continuation_gap >= -tol_c && self.min_intervention_gap >= -tol_c
    }
}

/// Bounded profit gives bounded values, held flat past the grid; exponential
/// profit gives values growing like `e^x`.
pub fn tails_for(spec: &ProblemSpec) -> Tails {
    if spec.profit.bounded() {
        Tails::Flat
    } else {
        Tails::Exponential
    }
}

/// Golden-section maximization on `[a, b]`; ties resolve toward smaller `m`.
fn golden_max(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while b - a > tol {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    if gc >= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

pub fn pointwise_max(a: &Field, b: &Field) -> Field {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| if y > x { y } else { x }).collect()).collect()
}

pub fn sup_diff(a: &Field, b: &Field) -> f64 {
    diff_stats(a, b).0
}

/// `(sup |a − b|, min (a − b))`; NaN as soon as any difference is NaN.
fn diff_stats(a: &Field, b: &Field) -> (f64, f64) {
    let mut sup = 0.0f64;
    let mut min = f64::INFINITY;
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            let d = x - y;
            if d.is_nan() {
                return (f64::NAN, f64::NAN);
            }
            sup = sup.max(d.abs());
            min = min.min(d);
        }
    }
    (sup, min)
}
