//! Monte Carlo estimation of a strategy's discounted gain.
//!
//! Episode `k` draws from the substreams of path id `k`, so two strategies
//! run with the same seed see the same Brownian increments (common random
//! numbers) and the estimate does not depend on the thread count. Episodes
//! run in parallel but are reduced in path order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::profit_tail_bound_with_growth;
use crate::model::{CostSpec, ProblemSpec, RegimeId};
use crate::rng::EpisodeRng;
use crate::strategy::{run_episode, EpisodeOptions, Strategy, StrategyError, StrategyKind, StrategyTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("InsufficientPaths: need at least 2 paths, got {0}")]
    InsufficientPaths(usize),
    #[error("episode {path_id}: {source}")]
    Episode {
        path_id: u64,
        #[source]
        source: StrategyError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Episodes with id below this keep their full path.
    pub record_paths: usize,
}

impl McConfig {
    pub fn new(n_paths: usize, horizon: f64, dt: f64, seed: u64) -> Self {
        McConfig { n_paths, horizon, dt, seed, record_paths: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Bound on the absolute value of the gain neglected after the horizon.
    pub tail_bound: f64,
    /// Number of episodes per impulse count.
    pub impulse_count_histogram: BTreeMap<usize, usize>,
}

impl GainEstimate {
    /// `|mean − target| ≤ k·stderr + tail_bound + slack`.
    pub fn brackets(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + self.tail_bound + slack
    }
}

/// Every episode of the run, in path order.
pub fn run_episodes(
    strategy: &Strategy,
    spec: &ProblemSpec,
    start: (RegimeId, f64),
    cfg: &McConfig,
) -> Result<Vec<StrategyTrace>, McError> {
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path_id| {
            let mut rng = EpisodeRng::new(cfg.seed, path_id);
            let opts = EpisodeOptions { record_path: (path_id as usize) < cfg.record_paths };
            run_episode(strategy, spec, start, cfg.horizon, cfg.dt, &mut rng, opts)
                .map_err(|source| McError::Episode { path_id, source })
        })
        .collect()
}

pub fn estimate_gain(
    strategy: &Strategy,
    spec: &ProblemSpec,
    start: (RegimeId, f64),
    cfg: &McConfig,
) -> Result<GainEstimate, McError> {
    if cfg.n_paths < 2 {
        return Err(McError::InsufficientPaths(cfg.n_paths));
    }
    let traces = run_episodes(strategy, spec, start, cfg)?;
    Ok(summarize(&traces, cfg, tail_bound(strategy, spec, start.1, cfg.horizon)))
}

pub fn summarize(traces: &[StrategyTrace], cfg: &McConfig, tail_bound: f64) -> GainEstimate {
    let gains: Vec<f64> = traces.iter().map(|t| t.gain).collect();
    let (mean, stderr) = mean_stderr(&gains);
    let mut impulse_count_histogram = BTreeMap::new();
    for t in traces {
        *impulse_count_histogram.entry(t.impulses.len()).or_insert(0) += 1;
    }
    GainEstimate {
        mean,
        stderr,
        n_paths: traces.len(),
        horizon: cfg.horizon,
        dt: cfg.dt,
        tail_bound,
        impulse_count_histogram,
    }
}

/// Sample mean and its standard error, accumulated in slice order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bound on `|gain after the horizon|`: the larger of the neglected profit
/// and the neglected costs, since both are nonnegative.
pub fn tail_bound(strategy: &Strategy, spec: &ProblemSpec, x0: f64, horizon: f64) -> f64 {
    let beta = spec.beta;
    let s = spec.kernel.jump_std;
    let disc = (-beta * horizon).exp();
    match &strategy.kind {
        StrategyKind::NoImpulse => profit_tail_bound_with_growth(spec, x0, horizon, 0.0),
        StrategyKind::FixedCadence { t0, m, .. } => {
            let jump_growth = (m + 0.5 * s * s).max(0.0) / t0;
            let profit = profit_tail_bound_with_growth(spec, x0, horizon, jump_growth);
            let (per_impulse, growth) = match spec.cost {
                CostSpec::InverseQuadratic => (1.0, 0.0),
                CostSpec::ExpMu { mu } => (
                    (x0 + mu * m + 0.5 * mu * mu * s * s).exp(),
                    spec.exp_growth_rate().unwrap_or(f64::INFINITY) + jump_growth,
                ),
            };
            // Σ_{k·t0 ≥ T} e^{−(β−g)·k·t0}
            let r = (-(beta - growth) * t0).exp();
            let cost = if r < 1.0 {
                let k0 = (horizon / t0 - 1e-9).ceil();
                per_impulse * r.powf(k0) / (1.0 - r)
            } else {
                f64::INFINITY
            };
            profit.max(cost)
        }
        StrategyKind::OptimalHitting(policy) => {
            // Paths stay in the grid up to the horizon.
            let x_hi = policy.region().grid().x_hi.max(x0);
            let profit = profit_tail_bound_with_growth(spec, x_hi, horizon, 0.0);
            let per_impulse = match spec.cost {
                CostSpec::InverseQuadratic => 1.0,
                CostSpec::ExpMu { mu } => {
                    let m = spec.kernel.m_lo.abs().max(spec.kernel.m_hi.abs());
                    (x_hi + mu.abs() * m + 0.5 * mu * mu * s * s).exp()
                }
            };
            profit.max(per_impulse * disc * strategy.max_impulses as f64)
        }
    }
}
