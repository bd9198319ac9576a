//! Impulse strategies and their execution against the simulator.
//!
//! Three strategy shapes are supported: never impulse, impulse on a fixed
//! deterministic cadence, and the hitting-time strategy read off a solve
//! (impulse whenever the state enters `I`, jump with the argmax kernel).
//! After every impulse the state diffuses for at least one step, so recorded
//! impulse times are strictly increasing.

use rand::Rng;
use thiserror::Error;

use crate::diffusion::{simulate_segment, DiffusionError, SegmentExit, SegmentOptions, StopRule};
use crate::model::{KernelMember, ProblemSpec, RegimeId};
use crate::region::Region;
use crate::rng::{EpisodeRng, GaussianSource};
use crate::solver::{Field, ValueFields};

/// Default cap on the number of impulses in one episode.
pub const DEFAULT_MAX_IMPULSES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("StateOutOfGrid: x = {x} outside [{lo}, {hi}]")]
    StateOutOfGrid { x: f64, lo: f64, hi: f64 },
    #[error("UnreachableRegime: p[{from}][{to}] = 0")]
    UnreachableRegime { from: usize, to: usize },
    #[error("invalid cadence strategy: {0}")]
    InvalidCadence(String),
    #[error("region and argmax fields come from different solves")]
    MismatchedPolicy,
    #[error("horizon must be positive (got {0})")]
    NonPositiveHorizon(f64),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// The hitting-time strategy of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingPolicy {
    region: Region,
    argmax_m: Field,
    argmax_j: Vec<Vec<RegimeId>>,
    /// Added to the argmax jump mean (then clamped to the kernel box); zero
    /// for the optimal strategy, nonzero for perturbed variants.
    m_offset: f64,
}

impl HittingPolicy {
    pub fn new(region: Region, fields: &ValueFields) -> Result<Self, StrategyError> {
        if region.grid() != &fields.grid || region.n_regimes() != fields.n_regimes() {
            return Err(StrategyError::MismatchedPolicy);
        }
        Ok(HittingPolicy {
            region,
            argmax_m: fields.argmax_m.clone(),
            argmax_j: fields.argmax_j.clone(),
            m_offset: 0.0,
        })
    }

    pub fn with_m_offset(mut self, m_offset: f64) -> Self {
        self.m_offset = m_offset;
        self
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn m_offset(&self) -> f64 {
        self.m_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    NoImpulse,
    /// Impulse at `t0, 2·t0, …` with jump mean `m`; the target regime is
    /// drawn from the row of `switch`.
    FixedCadence {
        t0: f64,
        m: f64,
        switch: Vec<Vec<f64>>,
    },
    OptimalHitting(HittingPolicy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub max_impulses: usize,
}

impl Strategy {
    pub fn no_impulse() -> Self {
        Strategy { kind: StrategyKind::NoImpulse, max_impulses: DEFAULT_MAX_IMPULSES }
    }

    pub fn fixed_cadence(spec: &ProblemSpec, t0: f64, m: f64) -> Result<Self, StrategyError> {
        if !(t0 > 0.0) {
            return Err(StrategyError::InvalidCadence(format!("t0 = {t0} must be positive")));
        }
        if !spec.kernel.contains_mean(m) {
            return Err(StrategyError::InvalidCadence(format!(
                "m = {m} outside [{}, {}]",
                spec.kernel.m_lo, spec.kernel.m_hi
            )));
        }
        Ok(Strategy {
            kind: StrategyKind::FixedCadence { t0, m, switch: spec.kernel.switch.clone() },
            max_impulses: DEFAULT_MAX_IMPULSES,
        })
    }

    pub fn optimal(policy: HittingPolicy) -> Self {
        Strategy { kind: StrategyKind::OptimalHitting(policy), max_impulses: DEFAULT_MAX_IMPULSES }
    }

    pub fn with_max_impulses(mut self, n: usize) -> Self {
        self.max_impulses = n;
        self
    }

    /// Truncation domain the simulator must stay in.
    pub fn domain(&self) -> Option<(f64, f64)> {
        match &self.kind {
            StrategyKind::OptimalHitting(p) => Some((p.region.grid().x_lo, p.region.grid().x_hi)),
            _ => None,
        }
    }

    /// Whether an impulse can ever happen from regime `i`.
    fn can_impulse(&self, i: RegimeId) -> bool {
        match &self.kind {
            StrategyKind::NoImpulse => false,
            StrategyKind::FixedCadence { .. } => true,
            StrategyKind::OptimalHitting(p) => !p.region.impulse_empty(i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Until {
    Horizon,
    /// Absolute episode time.
    Time(f64),
    /// First entry into the impulse set.
    ImpulseRegion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImpulseTarget {
    Regime(RegimeId),
    /// Draw the target from the switch-matrix row.
    FromRow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    ContinueUntil(Until),
    ImpulseNow { target: ImpulseTarget, member: KernelMember },
}

const CADENCE_TOL: f64 = 1e-9;

/// Decision of `strategy` at `state`, `elapsed` time into the episode.
pub fn next_action(
    strategy: &Strategy,
    spec: &ProblemSpec,
    state: (RegimeId, f64),
    elapsed: f64,
) -> Result<Action, StrategyError> {
    let (i, x) = state;
    match &strategy.kind {
        StrategyKind::NoImpulse => Ok(Action::ContinueUntil(Until::Horizon)),
        StrategyKind::FixedCadence { t0, m, switch } => {
            let k = (elapsed / t0).round();
            if k >= 1.0 && (elapsed - k * t0).abs() <= CADENCE_TOL * t0.max(1.0) {
                let target = row_target(switch, i);
                Ok(Action::ImpulseNow { target, member: KernelMember::Shift { m: *m } })
            } else {
                Ok(Action::ContinueUntil(Until::Time(next_cadence_time(*t0, elapsed))))
            }
        }
        StrategyKind::OptimalHitting(policy) => {
            let grid = policy.region.grid();
            if !grid.contains(x) {
                return Err(StrategyError::StateOutOfGrid { x, lo: grid.x_lo, hi: grid.x_hi });
            }
            if !policy.region.in_impulse(i, x) {
                return Ok(Action::ContinueUntil(if policy.region.impulse_empty(i) {
                    Until::Horizon
                } else {
                    Until::ImpulseRegion
                }));
            }
            let k = grid.nearest(x);
            let m = (policy.argmax_m[i.0][k] + policy.m_offset).clamp(spec.kernel.m_lo, spec.kernel.m_hi);
            let target = match spec.kernel.deterministic_target(i) {
                Some(j) => {
                    debug_assert_eq!(j, policy.argmax_j[i.0][k]);
                    ImpulseTarget::Regime(j)
                }
                None => ImpulseTarget::FromRow,
            };
            Ok(Action::ImpulseNow { target, member: KernelMember::Shift { m } })
        }
    }
}

fn row_target(switch: &[Vec<f64>], i: RegimeId) -> ImpulseTarget {
    let mut reachable = switch[i.0].iter().enumerate().filter(|(_, &p)| p > 0.0);
    match (reachable.next(), reachable.next()) {
        (Some((j, _)), None) => ImpulseTarget::Regime(RegimeId(j)),
        _ => ImpulseTarget::FromRow,
    }
}

/// Smallest multiple of `t0` strictly after `elapsed`.
fn next_cadence_time(t0: f64, elapsed: f64) -> f64 {
    let k = (elapsed / t0 + CADENCE_TOL).floor() + 1.0;
    k * t0
}

/// Post-impulse state. The Dirac member leaves the state unchanged; a shift
/// member moves to `(j, x + m + s·z)`.
pub fn apply_impulse<R: Rng>(
    spec: &ProblemSpec,
    state: (RegimeId, f64),
    target: ImpulseTarget,
    member: KernelMember,
    rng: &mut R,
) -> Result<(RegimeId, f64), StrategyError> {
    let (i, x) = state;
    let m = match member {
        KernelMember::Dirac => return Ok(state),
        KernelMember::Shift { m } => m,
    };
    let row = &spec.kernel.switch[i.0];
    let j = match target {
        ImpulseTarget::Regime(j) => {
            if !(row.get(j.0).copied().unwrap_or(0.0) > 0.0) {
                return Err(StrategyError::UnreachableRegime { from: i.0, to: j.0 });
            }
            j
        }
        ImpulseTarget::FromRow => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for (j, &p) in row.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                acc += p;
                pick = Some(j);
                if u < acc {
                    break;
                }
            }
            RegimeId(pick.ok_or(StrategyError::UnreachableRegime { from: i.0, to: i.0 })?)
        }
    };
    let z = rng.next_normal();
    Ok((j, x + m + spec.kernel.jump_std * z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseRecord {
    pub tau: f64,
    pub from: (RegimeId, f64),
    pub to: (RegimeId, f64),
    /// `e^{−β·τ}·c(from, to)`.
    pub discounted_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppedReason {
    HorizonReached,
    ImpulseCapHit,
    /// The horizon was reached in a state from which the strategy never
    /// impulses again.
    AbsorbedInContinuation,
}

impl StoppedReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StoppedReason::HorizonReached => "HorizonReached",
            StoppedReason::ImpulseCapHit => "ImpulseCapHit",
            StoppedReason::AbsorbedInContinuation => "AbsorbedInContinuation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub regime: RegimeId,
    pub y: f64,
    pub profit_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTrace {
    pub impulses: Vec<ImpulseRecord>,
    /// Discounted profit of each inter-impulse segment, in time order.
    pub segment_profits: Vec<f64>,
    pub total_profit: f64,
    pub total_cost: f64,
    pub gain: f64,
    pub stopped_reason: StoppedReason,
    pub final_state: (RegimeId, f64),
    pub path: Option<Vec<PathPoint>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    pub record_path: bool,
}

/// Simulate one episode of `strategy` from `start` over `[0, horizon]`.
pub fn run_episode(
    strategy: &Strategy,
    spec: &ProblemSpec,
    start: (RegimeId, f64),
    horizon: f64,
    dt: f64,
    rng: &mut EpisodeRng,
    opts: EpisodeOptions,
) -> Result<StrategyTrace, StrategyError> {
    if !(horizon > 0.0) {
        return Err(StrategyError::NonPositiveHorizon(horizon));
    }
    let seg_opts = SegmentOptions { record: opts.record_path, domain: strategy.domain() };
    let mut state = start;
    let mut t = 0.0;
    let mut impulses: Vec<ImpulseRecord> = Vec::new();
    let mut segment_profits = Vec::new();
    let mut path = opts.record_path.then(Vec::new);
    let mut cap_hit = false;
    let mut absorbed;

    let mut pending = next_action(strategy, spec, state, t)?;
    loop {
        let until = match pending {
            Action::ImpulseNow { target, member } if !cap_hit => {
                let to = apply_impulse(spec, state, target, member, &mut rng.jumps)?;
                let cost = (-spec.beta * t).exp() * spec.cost(state.0, state.1, to.0, to.1);
                impulses.push(ImpulseRecord { tau: t, from: state, to, discounted_cost: cost });
                state = to;
                if impulses.len() >= strategy.max_impulses {
                    cap_hit = true;
                }
                if cap_hit {
                    Until::Horizon
                } else {
                    continuation_after_impulse(strategy, state.0, t)
                }
            }
            Action::ImpulseNow { .. } => Until::Horizon,
            Action::ContinueUntil(u) => {
                if cap_hit {
                    Until::Horizon
                } else {
                    u
                }
            }
        };
        absorbed = !cap_hit && !strategy.can_impulse(state.0);
        let region;
        let stop = match until {
            Until::Horizon => StopRule::horizon(horizon),
            Until::Time(te) => StopRule::horizon(te.min(horizon)),
            Until::ImpulseRegion => match &strategy.kind {
                StrategyKind::OptimalHitting(p) => {
                    region = &p.region;
                    StopRule::region(region, horizon)
                }
                _ => StopRule::horizon(horizon),
            },
        };
        let seg = simulate_segment(spec, state.0, state.1, &stop, dt, t, &mut rng.increments, seg_opts)?;
        if let Some(path) = path.as_mut() {
            let base: f64 = segment_profits.iter().sum();
            for ((&tt, &y), &p) in seg.times.iter().zip(&seg.values).zip(&seg.profit_so_far) {
                path.push(PathPoint { t: tt, regime: state.0, y, profit_so_far: base + p });
            }
        }
        segment_profits.push(seg.discounted_profit);
        t = seg.end_t;
        state.1 = seg.end_x;
        if seg.exit == SegmentExit::HorizonReached && t >= horizon {
            break;
        }
        pending = next_action(strategy, spec, state, t)?;
    }

    let total_profit = segment_profits.iter().fold(0.0, |acc, p| acc + p);
    let total_cost = impulses.iter().fold(0.0, |acc, r| acc + r.discounted_cost);
    let stopped_reason = if cap_hit {
        StoppedReason::ImpulseCapHit
    } else if absorbed {
        StoppedReason::AbsorbedInContinuation
    } else {
        StoppedReason::HorizonReached
    };
    Ok(StrategyTrace {
        impulses,
        segment_profits,
        total_profit,
        total_cost,
        gain: total_profit - total_cost,
        stopped_reason,
        final_state: state,
        path,
    })
}

/// What to wait for right after an impulse at time `t`: at least one step
/// always elapses before the next decision.
fn continuation_after_impulse(strategy: &Strategy, regime: RegimeId, t: f64) -> Until {
    match &strategy.kind {
        StrategyKind::NoImpulse => Until::Horizon,
        StrategyKind::FixedCadence { t0, .. } => Until::Time(next_cadence_time(*t0, t)),
        StrategyKind::OptimalHitting(p) => {
            if p.region.impulse_empty(regime) {
                Until::Horizon
            } else {
                Until::ImpulseRegion
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::arctan_example;

    fn toy_policy(impulse: Vec<Vec<bool>>) -> (HittingPolicy, Grid) {
        let grid = Grid::new(-25.0, 25.0, 101, 0.05).unwrap();
        let fields = ValueFields {
            grid,
            rho_plus: vec![vec![1.0; 101]; 2],
            m_star: vec![vec![0.0; 101]; 2],
            rho: vec![vec![1.0; 101]; 2],
            argmax_m: vec![vec![0.5; 101]; 2],
            argmax_j: vec![vec![RegimeId(1); 101], vec![RegimeId(0); 101]],
            iterations: 1,
            residual: 0.0,
            tol: 1e-7,
            min_sweep_delta: 0.0,
        };
        let region = Region::from_mask(grid, 1e-6, impulse);
        (HittingPolicy::new(region, &fields).unwrap(), grid)
    }

    #[test]
    fn empty_impulse_set_always_continues() {
        let spec = arctan_example();
        let (policy, _) = toy_policy(vec![vec![false; 101]; 2]);
        let s = Strategy::optimal(policy);
        for x in [-24.0, 0.0, 3.3] {
            assert_eq!(next_action(&s, &spec, (RegimeId(0), x), 0.0).unwrap(), Action::ContinueUntil(Until::Horizon));
        }
    }

    #[test]
    fn state_in_impulse_set_impulses_now() {
        let spec = arctan_example();
        let mut mask = vec![vec![false; 101]; 2];
        for k in 40..=60 {
            mask[0][k] = true;
        }
        let (policy, _) = toy_policy(mask);
        let s = Strategy::optimal(policy);
        let a = next_action(&s, &spec, (RegimeId(0), 0.0), 0.0).unwrap();
        assert_eq!(
            a,
            Action::ImpulseNow { target: ImpulseTarget::Regime(RegimeId(1)), member: KernelMember::Shift { m: 0.5 } }
        );
        let c = next_action(&s, &spec, (RegimeId(0), 7.0), 0.0).unwrap();
        assert_eq!(c, Action::ContinueUntil(Until::ImpulseRegion));
        assert!(matches!(next_action(&s, &spec, (RegimeId(0), 30.0), 0.0), Err(StrategyError::StateOutOfGrid { .. })));
    }

    #[test]
    fn cadence_arithmetic() {
        let spec = arctan_example();
        let s = Strategy::fixed_cadence(&spec, 1.0, 0.3).unwrap();
        assert_eq!(next_action(&s, &spec, (RegimeId(0), 0.0), 0.5).unwrap(), Action::ContinueUntil(Until::Time(1.0)));
        assert_eq!(next_action(&s, &spec, (RegimeId(0), 0.0), 0.0).unwrap(), Action::ContinueUntil(Until::Time(1.0)));
        assert!(matches!(next_action(&s, &spec, (RegimeId(0), 0.0), 2.0).unwrap(), Action::ImpulseNow { .. }));
        assert!(Strategy::fixed_cadence(&spec, 0.0, 0.3).is_err());
        assert!(Strategy::fixed_cadence(&spec, 1.0, 3.0).is_err());
    }

    #[test]
    fn impulse_draws() {
        let spec = arctan_example();
        let mut rng = EpisodeRng::new(1, 1).jumps;
        let s = (RegimeId(0), 0.25);
        assert_eq!(apply_impulse(&spec, s, ImpulseTarget::FromRow, KernelMember::Dirac, &mut rng).unwrap(), s);

        struct Zero;
        impl rand::RngCore for Zero {
            fn next_u32(&mut self) -> u32 {
                0
            }
            fn next_u64(&mut self) -> u64 {
                0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(0)
            }
        }
        let mut spec2 = spec.clone();
        spec2.kernel.m_hi = 2.0;
        let (j, y) = apply_impulse(
            &spec2,
            (RegimeId(0), 0.0),
            ImpulseTarget::Regime(RegimeId(1)),
            KernelMember::Shift { m: 2.0 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(j, RegimeId(1));
        assert!(y.is_finite());
        assert!(matches!(
            apply_impulse(&spec, s, ImpulseTarget::Regime(RegimeId(0)), KernelMember::Shift { m: 0.0 }, &mut rng),
            Err(StrategyError::UnreachableRegime { from: 0, to: 0 })
        ));

        // Law of large numbers on the jump size.
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (_, y) =
                apply_impulse(&spec, s, ImpulseTarget::FromRow, KernelMember::Shift { m: 0.7 }, &mut rng).unwrap();
            sum += y - s.1;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.7).abs() < 3.0 / (n as f64).sqrt(), "mean jump {mean}");
        let _ = Zero;
    }

    #[test]
    fn no_impulse_episode_has_no_impulses() {
        let spec = arctan_example();
        let mut rng = EpisodeRng::new(3, 0);
        let tr = run_episode(
            &Strategy::no_impulse(),
            &spec,
            (RegimeId(0), 0.0),
            5.0,
            0.01,
            &mut rng,
            EpisodeOptions::default(),
        )
        .unwrap();
        assert!(tr.impulses.is_empty());
        assert_eq!(tr.gain, tr.total_profit);
        assert_eq!(tr.segment_profits.len(), 1);
        assert_eq!(tr.stopped_reason, StoppedReason::AbsorbedInContinuation);
    }

    #[test]
    fn cadence_episode_times_and_accounting() {
        let spec = arctan_example();
        let s = Strategy::fixed_cadence(&spec, 1.0, 0.3).unwrap();
        let mut rng = EpisodeRng::new(3, 1);
        let tr = run_episode(&s, &spec, (RegimeId(0), 0.0), 5.5, 0.01, &mut rng, EpisodeOptions::default()).unwrap();
        let taus: Vec<f64> = tr.impulses.iter().map(|r| r.tau).collect();
        assert_eq!(taus.len(), 5);
        for (k, tau) in taus.iter().enumerate() {
            assert!((tau - (k + 1) as f64).abs() < 1e-9);
        }
        for w in tr.impulses.windows(2) {
            assert_eq!(w[0].to.0, w[1].from.0);
            assert_ne!(w[1].from.0, w[1].to.0);
        }
        let profit = tr.segment_profits.iter().fold(0.0, |a, p| a + p);
        let cost = tr.impulses.iter().fold(0.0, |a, r| a + r.discounted_cost);
        assert_eq!(tr.gain, profit - cost);
        assert_eq!(tr.stopped_reason, StoppedReason::HorizonReached);
    }

    #[test]
    fn impulse_cap_stops_impulsing() {
        let spec = arctan_example();
        let s = Strategy::fixed_cadence(&spec, 0.5, 0.0).unwrap().with_max_impulses(3);
        let mut rng = EpisodeRng::new(4, 0);
        let tr = run_episode(&s, &spec, (RegimeId(0), 0.0), 10.0, 0.01, &mut rng, EpisodeOptions::default()).unwrap();
        assert_eq!(tr.impulses.len(), 3);
        assert_eq!(tr.stopped_reason, StoppedReason::ImpulseCapHit);
    }

    #[test]
    fn immediate_impulse_then_strictly_later_ones() {
        let spec = arctan_example();
        // Everything is in I: impulse at 0, then once per step until the cap.
        let (policy, _) = toy_policy(vec![vec![true; 101]; 2]);
        let s = Strategy::optimal(policy).with_max_impulses(10);
        let mut rng = EpisodeRng::new(8, 0);
        let tr = run_episode(&s, &spec, (RegimeId(0), 0.0), 2.0, 0.05, &mut rng, EpisodeOptions::default()).unwrap();
        assert_eq!(tr.impulses[0].tau, 0.0);
        assert!(tr.impulses.windows(2).all(|w| w[1].tau > w[0].tau));
        assert!(tr.impulses.windows(2).all(|w| (w[1].tau - w[0].tau - 0.05).abs() < 1e-9));
    }

    #[test]
    fn recorded_path_matches_segments() {
        let spec = arctan_example();
        let s = Strategy::fixed_cadence(&spec, 0.5, 0.0).unwrap();
        let mut rng = EpisodeRng::new(4, 2);
        let tr = run_episode(&s, &spec, (RegimeId(1), 0.0), 1.2, 0.1, &mut rng, EpisodeOptions { record_path: true })
            .unwrap();
        let path = tr.path.unwrap();
        let last = path.last().unwrap();
        assert!((last.t - 1.2).abs() < 1e-12);
        assert!((last.profit_so_far - tr.total_profit).abs() < 1e-12);
    }
}
