//! Uniform truncation grid over the state line and field interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid bounds must satisfy x_lo < x_hi (got {x_lo}, {x_hi})")]
    EmptyRange { x_lo: f64, x_hi: f64 },
    #[error("grid needs at least 3 points (got {0})")]
    TooFewPoints(usize),
    #[error("Bellman time step must be positive (got {0})")]
    NonPositiveDt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_points: usize,
    pub dt: f64,
}

impl Grid {
    pub fn new(x_lo: f64, x_hi: f64, n_points: usize, dt: f64) -> Result<Self, GridError> {
        if !(x_lo < x_hi) {
            return Err(GridError::EmptyRange { x_lo, x_hi });
        }
        if n_points < 3 {
            return Err(GridError::TooFewPoints(n_points));
        }
        if !(dt > 0.0) {
            return Err(GridError::NonPositiveDt(dt));
        }
        Ok(Grid { x_lo, x_hi, n_points, dt })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_points - 1) as f64
    }

    #[inline]
    pub fn x(&self, k: usize) -> f64 {
        if k == self.n_points - 1 {
            self.x_hi
        } else {
            self.x_lo + k as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|k| self.x(k))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi
    }

    /// Index of the nearest grid point, clamped to the grid.
    #[inline]
    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.x_lo) / self.spacing()).round();
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(self.n_points - 1)
        }
    }

    /// Linear-interpolation stencil `(k, θ)`: the value at `x` is
    /// `(1−θ)·v[k] + θ·v[k+1]`. Constant extrapolation outside the grid.
    #[inline]
    pub fn stencil(&self, x: f64) -> (usize, f64) {
        let n = self.n_points;
        if !(x > self.x_lo) {
            return (0, 0.0);
        }
        if x >= self.x_hi {
            return (n - 2, 1.0);
        }
        let t = (x - self.x_lo) / self.spacing();
        let k = (t.floor() as usize).min(n - 2);
        (k, (t - k as f64).clamp(0.0, 1.0))
    }

    #[inline]
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let (k, theta) = self.stencil(x);
        if theta == 0.0 {
            values[k]
        } else if theta == 1.0 {
            values[k + 1]
        } else {
            (1.0 - theta) * values[k] + theta * values[k + 1]
        }
    }

    /// Two-point interpolation weights `(k, w_k, w_{k+1})` under `tails`.
    /// Inside the grid they are the linear-interpolation weights.
    #[inline]
    pub fn weights(&self, x: f64, tails: Tails) -> (usize, f64, f64) {
        let n = self.n_points;
        match tails {
            Tails::Exponential if x > self.x_hi => (n - 2, 0.0, (x - self.x_hi).exp()),
            Tails::Exponential if x < self.x_lo => (0, (x - self.x_lo).exp(), 0.0),
            _ => {
                let (k, theta) = self.stencil(x);
                (k, 1.0 - theta, theta)
            }
        }
    }

    #[inline]
    pub fn interp_with(&self, values: &[f64], x: f64, tails: Tails) -> f64 {
        match tails {
            Tails::Flat => self.interp(values, x),
            Tails::Exponential => {
                let (k, a, b) = self.weights(x, tails);
                a * values[k] + b * values[k + 1]
            }
        }
    }

    /// Indices inside the central `keep` fraction of the grid, e.g. 0.8 drops
    /// the outer 10% on each side.
    pub fn interior(&self, keep: f64) -> std::ops::RangeInclusive<usize> {
        let margin = 0.5 * (1.0 - keep) * (self.x_hi - self.x_lo);
        let lo = self.x_lo + margin;
        let hi = self.x_hi - margin;
        let h = self.spacing();
        let first = ((lo - self.x_lo) / h - 1e-9).ceil().max(0.0) as usize;
        let last = (((hi - self.x_lo) / h + 1e-9).floor() as usize).min(self.n_points - 1);
        first..=last
    }
}

/// How fields are continued beyond `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tails {
    /// Hold the end value.
    #[default]
    Flat,
    /// Scale the end value by `e^{x − x_end}`, the asymptotics of a field
    /// growing like `e^x`.
    Exponential,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(Grid::new(1.0, 1.0, 10, 0.1), Err(GridError::EmptyRange { .. })));
        assert!(matches!(Grid::new(0.0, 1.0, 2, 0.1), Err(GridError::TooFewPoints(2))));
        assert!(matches!(Grid::new(0.0, 1.0, 3, 0.0), Err(GridError::NonPositiveDt(_))));
    }

    #[test]
    fn spacing_and_endpoints() {
        let g = Grid::new(-2.0, 2.0, 401, 0.005).unwrap();
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(0), -2.0);
        assert_eq!(g.x(400), 2.0);
        assert_eq!(g.nearest(0.004), 200);
        assert_eq!(g.nearest(-9.0), 0);
        assert_eq!(g.nearest(9.0), 400);
    }

    #[test]
    fn interpolation_is_exact_on_lines_and_flat_outside() {
        let g = Grid::new(-1.0, 3.0, 41, 0.1).unwrap();
        let v: Vec<f64> = g.points().map(|x| 2.0 * x - 1.0).collect();
        for x in [-0.95, 0.0, 0.123, 2.999] {
            assert!((g.interp(&v, x) - (2.0 * x - 1.0)).abs() < 1e-12);
        }
        assert_eq!(g.interp(&v, -5.0), v[0]);
        assert_eq!(g.interp(&v, 5.0), v[40]);
        assert_eq!(g.interp(&v, g.x(7)), v[7]);
    }

    #[test]
    fn exponential_tails_are_exact_for_exp() {
        let g = Grid::new(-1.0, 1.0, 21, 0.1).unwrap();
        let v: Vec<f64> = g.points().map(f64::exp).collect();
        for x in [-3.0, -1.5, 1.2, 4.0] {
            let y = g.interp_with(&v, x, Tails::Exponential);
            assert!((y / x.exp() - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.interp_with(&v, 0.55, Tails::Exponential), g.interp(&v, 0.55));
        assert_eq!(g.interp_with(&v, 3.0, Tails::Flat), v[20]);
    }

    #[test]
    fn interior_window() {
        let g = Grid::new(-2.0, 2.0, 401, 0.005).unwrap();
        let r = g.interior(0.8);
        assert!((g.x(*r.start()) + 1.6).abs() < 1e-12);
        assert!((g.x(*r.end()) - 1.6).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn interpolation_stays_within_neighbours(x in -3.0f64..5.0, seed in 0u64..1000) {
            let g = Grid::new(-1.0, 3.0, 17, 0.1).unwrap();
            let v: Vec<f64> = (0..17).map(|k| ((k as u64 * 7919 + seed) % 101) as f64).collect();
            let (k, _) = g.stencil(x);
            let y = g.interp(&v, x);
            let (lo, hi) = (v[k].min(v[k + 1]), v[k].max(v[k + 1]));
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }
}
