//! Euler–Maruyama simulation of the state between impulses, with the
//! discounted profit integral accumulated by the trapezoid rule and region
//! hitting monitored at grid times.

use thiserror::Error;

use crate::model::{ProblemSpec, RegimeId};
use crate::rng::GaussianSource;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("GridEscape: path left the truncation domain at t = {t} (x = {x})")]
    GridEscape { t: f64, x: f64 },
    #[error("time step must be positive (got {0})")]
    NonPositiveDt(f64),
}

/// A set of states the simulation stops on.
pub trait TargetSet: Sync {
    fn contains(&self, regime: RegimeId, x: f64) -> bool;
}

pub struct EntireLine;

impl TargetSet for EntireLine {
    fn contains(&self, _: RegimeId, _: f64) -> bool {
        true
    }
}

pub struct EmptySet;

impl TargetSet for EmptySet {
    fn contains(&self, _: RegimeId, _: f64) -> bool {
        false
    }
}

/// Stop at the first grid time the state lies in `region`, or at the
/// absolute time `t_end`, whichever comes first.
#[derive(Clone, Copy)]
pub struct StopRule<'a> {
    pub region: Option<&'a dyn TargetSet>,
    pub t_end: f64,
}

impl<'a> StopRule<'a> {
    pub fn horizon(t_end: f64) -> Self {
        StopRule { region: None, t_end }
    }

    pub fn region(region: &'a dyn TargetSet, t_end: f64) -> Self {
        StopRule { region: Some(region), t_end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentExit {
    /// First monitored time `t` in the target region; `x_pre` is the last
    /// monitored state outside it.
    RegionHit {
        t: f64,
        x_pre: f64,
        x_hit: f64,
    },
    HorizonReached,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SegmentOptions {
    /// Keep every `(t, Y_t)` pair; otherwise only the endpoints are stored.
    pub record: bool,
    /// Truncation domain; leaving it aborts the segment with `GridEscape`.
    pub domain: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub regime: RegimeId,
    pub start_x: f64,
    /// Global times, starting at the segment start.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Running discounted profit at each recorded time (only when recording).
    pub profit_so_far: Vec<f64>,
    /// `∫ e^{−βs} f(i, Y_s) ds` over the segment, discounted from time 0.
    pub discounted_profit: f64,
    pub end_t: f64,
    pub end_x: f64,
    pub steps: usize,
    pub exit: SegmentExit,
}

/// One Euler–Maruyama step `x + b(i,x)·dt + σ(i,x)·√dt·z`.
#[inline]
pub fn euler_step(spec: &ProblemSpec, i: RegimeId, x: f64, dt: f64, z: f64) -> f64 {
    x + spec.drift(i, x) * dt + spec.vol(i, x) * dt.sqrt() * z
}

/// `∫_0^dt e^{−βs} ds = (1 − e^{−β·dt})/β`.
#[inline]
pub fn discount_weight(beta: f64, dt: f64) -> f64 {
    -(-beta * dt).exp_m1() / beta
}

/// Upper bound on the expected discounted profit after time `t`, given the
/// state `(i, x)` at `t` and no further impulses.
pub fn profit_tail_bound(spec: &ProblemSpec, x: f64, t: f64) -> f64 {
    profit_tail_bound_with_growth(spec, x, t, 0.0)
}

/// As [`profit_tail_bound`], with the state additionally allowed to grow at
/// rate `extra` (e.g. from jumps) on top of the diffusion.
pub fn profit_tail_bound_with_growth(spec: &ProblemSpec, x: f64, t: f64, extra: f64) -> f64 {
    match spec.profit.sup_norm() {
        Some(sup) => sup * (-spec.beta * t).exp() / spec.beta,
        None => {
            // E[η e^{Y_s}] ≤ η e^{x + g s}, g = max(b + σ²/2) + extra.
            let growth = spec.exp_growth_rate().unwrap_or(f64::INFINITY) + extra;
            let margin = spec.beta - growth;
            if margin > 0.0 {
                spec.profit.eval(x) * (-margin * t).exp() / margin
            } else {
                f64::INFINITY
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_segment<G: GaussianSource + ?Sized>(
    spec: &ProblemSpec,
    i: RegimeId,
    x: f64,
    stop: &StopRule<'_>,
    dt: f64,
    global_t0: f64,
    rng: &mut G,
    opts: SegmentOptions,
) -> Result<PathSegment, DiffusionError> {
    if !(dt > 0.0) {
        return Err(DiffusionError::NonPositiveDt(dt));
    }
    let beta = spec.beta;
    let mut t = global_t0;
    let mut y = x;
    let mut disc_f = (-beta * t).exp() * spec.profit(i, y);
    let mut profit = 0.0;
    let mut steps = 0usize;
    let mut exit = SegmentExit::HorizonReached;

    let mut times = vec![t];
    let mut values = vec![y];
    let mut profit_so_far = vec![0.0];

    while t < stop.t_end {
        let remaining = stop.t_end - t;
        let (h, t_next) = if remaining <= dt * (1.0 + 1e-9) {
            (remaining, stop.t_end)
        } else {
            (dt, global_t0 + (steps + 1) as f64 * dt)
        };
        let z = rng.next_normal();
        let y_next = euler_step(spec, i, y, h, z);
        let disc_f_next = (-beta * t_next).exp() * spec.profit(i, y_next);
        profit += 0.5 * h * (disc_f + disc_f_next);
        steps += 1;
        let y_prev = y;
        y = y_next;
        t = t_next;
        disc_f = disc_f_next;

        if let Some((lo, hi)) = opts.domain {
            if !(y >= lo && y <= hi) {
                return Err(DiffusionError::GridEscape { t, x: y });
            }
        }
        if opts.record {
            times.push(t);
            values.push(y);
            profit_so_far.push(profit);
        }
        if let Some(region) = stop.region {
            if region.contains(i, y) {
                exit = SegmentExit::RegionHit { t, x_pre: y_prev, x_hit: y };
                break;
            }
        }
    }
    if !opts.record && steps > 0 {
        times.push(t);
        values.push(y);
        profit_so_far.push(profit);
    }

    Ok(PathSegment {
        regime: i,
        start_x: x,
        times,
        values,
        profit_so_far,
        discounted_profit: profit,
        end_t: t,
        end_x: y,
        steps,
        exit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{arctan_example, exp_example, DynamicsSpec};
    use crate::rng::RngStream;

    struct Zeros;
    impl GaussianSource for Zeros {
        fn next_normal(&mut self) -> f64 {
            0.0
        }
    }

    fn one_regime_exp(b: f64, s: f64) -> ProblemSpec {
        let mut spec = exp_example(1.0, 0.5);
        spec.dynamics = DynamicsSpec::constant(&[b, b], &[s, s]);
        spec
    }

    #[test]
    fn euler_step_examples() {
        let spec = one_regime_exp(0.1, 0.2);
        assert!((euler_step(&spec, RegimeId(0), 0.0, 0.01, 0.0) - 0.001).abs() < 1e-18);
        let flat = one_regime_exp(0.1, 0.0);
        assert_eq!(euler_step(&flat, RegimeId(0), 0.5, 0.01, 3.7), 0.5 + 0.1 * 0.01);
        let unit = one_regime_exp(0.0, 1.0);
        assert_eq!(euler_step(&unit, RegimeId(0), 0.0, 1.0, 1.5), 1.5);
    }

    #[test]
    fn discount_weight_values() {
        // (1 − e^{−0.005})/0.5
        let w = discount_weight(0.5, 0.01);
        assert!((w - 0.009_975_041_614_635_374).abs() < 1e-15, "{w}");
        let tiny = discount_weight(0.5, 1e-9);
        assert!((tiny / 1e-9 - 1.0).abs() < 1e-8);
        assert!((discount_weight(0.5, 200.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn entire_line_stops_after_one_step() {
        let spec = arctan_example();
        let mut rng = RngStream::new(1, 0).rng();
        let seg = simulate_segment(
            &spec,
            RegimeId(0),
            0.0,
            &StopRule::region(&EntireLine, 10.0),
            0.01,
            0.0,
            &mut rng,
            SegmentOptions::default(),
        )
        .unwrap();
        assert_eq!(seg.steps, 1);
        match seg.exit {
            SegmentExit::RegionHit { t, x_pre, .. } => {
                assert_eq!(t, 0.01);
                assert_eq!(x_pre, 0.0);
            }
            other => panic!("unexpected exit {other:?}"),
        }
    }

    #[test]
    fn bounded_profit_over_unit_horizon() {
        let spec = arctan_example();
        let bound = std::f64::consts::PI * (1.0 - (-0.5f64).exp()) / 0.5;
        for path in 0..20 {
            let mut rng = RngStream::new(5, path).rng();
            let seg = simulate_segment(
                &spec,
                RegimeId(1),
                0.3,
                &StopRule::region(&EmptySet, 1.0),
                0.01,
                0.0,
                &mut rng,
                SegmentOptions::default(),
            )
            .unwrap();
            assert_eq!(seg.exit, SegmentExit::HorizonReached);
            assert_eq!(seg.end_t, 1.0);
            assert!(seg.discounted_profit >= 0.0 && seg.discounted_profit <= bound);
        }
    }

    #[test]
    fn zero_volatility_is_a_straight_line() {
        let spec = one_regime_exp(0.1, 0.0);
        let mut rng = RngStream::new(0, 0).rng();
        let seg = simulate_segment(
            &spec,
            RegimeId(0),
            -1.0,
            &StopRule::horizon(3.0),
            0.01,
            0.0,
            &mut rng,
            SegmentOptions { record: true, domain: None },
        )
        .unwrap();
        for (t, y) in seg.times.iter().zip(&seg.values) {
            assert!((y - (-1.0 + 0.1 * t)).abs() < 1e-12);
        }
        assert_eq!(seg.steps, 300);
    }

    #[test]
    fn last_step_is_shortened_to_hit_the_horizon() {
        let spec = arctan_example();
        let mut rng = RngStream::new(0, 0).rng();
        let seg = simulate_segment(
            &spec,
            RegimeId(0),
            0.0,
            &StopRule::horizon(0.035),
            0.01,
            0.0,
            &mut rng,
            SegmentOptions { record: true, domain: None },
        )
        .unwrap();
        assert_eq!(seg.steps, 4);
        assert_eq!(*seg.times.last().unwrap(), 0.035);
        assert!(seg.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn escape_is_reported() {
        let spec = one_regime_exp(5.0, 0.0);
        let mut rng = Zeros;
        let err = simulate_segment(
            &spec,
            RegimeId(0),
            0.0,
            &StopRule::horizon(10.0),
            0.1,
            0.0,
            &mut rng,
            SegmentOptions { record: false, domain: Some((-1.0, 1.0)) },
        )
        .unwrap_err();
        assert!(matches!(err, DiffusionError::GridEscape { .. }));
    }

    #[test]
    fn longer_horizon_never_earns_less() {
        let spec = arctan_example();
        let mut prev = 0.0;
        for t_end in [0.5, 1.0, 2.0, 4.0] {
            let mut rng = RngStream::new(11, 4).rng();
            let seg = simulate_segment(
                &spec,
                RegimeId(0),
                0.0,
                &StopRule::horizon(t_end),
                0.01,
                0.0,
                &mut rng,
                SegmentOptions::default(),
            )
            .unwrap();
            assert!(seg.discounted_profit >= prev);
            prev = seg.discounted_profit;
        }
    }

    #[test]
    fn profit_is_discounted_from_the_global_start() {
        let spec = one_regime_exp(0.0, 0.0);
        let mut rng = Zeros;
        let at0 = simulate_segment(
            &spec,
            RegimeId(0),
            0.0,
            &StopRule::horizon(1.0),
            0.01,
            0.0,
            &mut rng,
            SegmentOptions::default(),
        )
        .unwrap();
        let at2 = simulate_segment(
            &spec,
            RegimeId(0),
            0.0,
            &StopRule::horizon(3.0),
            0.01,
            2.0,
            &mut rng,
            SegmentOptions::default(),
        )
        .unwrap();
        let ratio = at2.discounted_profit / at0.discounted_profit;
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-9);
    }
}
