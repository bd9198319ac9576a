//! Impulse set `I = {ρ − m*ρ⁺ ≤ ε}` and its complement, the continuation
//! set `C`, stored per regime as maximal runs of grid points.
//!
//! An off-grid state belongs to the set of its nearest grid point, so a
//! closed run `[x_a, x_b]` covers `[x_a − h/2, x_b + h/2]` when simulating.

use serde::{Deserialize, Serialize};

use crate::diffusion::TargetSet;
use crate::grid::Grid;
use crate::model::RegimeId;
use crate::solver::ValueFields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    I,
    C,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::I => "I",
            Label::C => "C",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    grid: Grid,
    epsilon: f64,
    impulse: Vec<Vec<bool>>,
}

impl Region {
    pub fn from_mask(grid: Grid, epsilon: f64, impulse: Vec<Vec<bool>>) -> Self {
        assert!(impulse.iter().all(|r| r.len() == grid.n_points));
        Region { grid, epsilon, impulse }
    }

    /// Rebuild from closed `I` runs given as grid-index pairs.
    pub fn from_intervals(grid: Grid, epsilon: f64, intervals: &[Vec<(usize, usize)>]) -> Self {
        let impulse = intervals
            .iter()
            .map(|runs| {
                let mut mask = vec![false; grid.n_points];
                for &(a, b) in runs {
                    for m in &mut mask[a..=b] {
                        *m = true;
                    }
                }
                mask
            })
            .collect();
        Region { grid, epsilon, impulse }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_regimes(&self) -> usize {
        self.impulse.len()
    }

    pub fn label(&self, i: RegimeId, k: usize) -> Label {
        if self.impulse[i.0][k] {
            Label::I
        } else {
            Label::C
        }
    }

    pub fn is_impulse_point(&self, i: RegimeId, k: usize) -> bool {
        self.impulse[i.0][k]
    }

    /// Membership of an arbitrary state, by nearest grid point.
    pub fn in_impulse(&self, i: RegimeId, x: f64) -> bool {
        self.impulse[i.0][self.grid.nearest(x)]
    }

    pub fn impulse_empty(&self, i: RegimeId) -> bool {
        !self.impulse[i.0].iter().any(|&b| b)
    }

    pub fn mask(&self, i: RegimeId) -> &[bool] {
        &self.impulse[i.0]
    }

    /// Maximal runs `(first, last)` of grid indices carrying `label`.
    pub fn runs(&self, i: RegimeId, label: Label) -> Vec<(usize, usize)> {
        let want = label == Label::I;
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for (k, &b) in self.impulse[i.0].iter().enumerate() {
            match (b == want, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    out.push((s, k - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.grid.n_points - 1));
        }
        out
    }

    /// Runs as closed `[x_first, x_last]` intervals.
    pub fn intervals(&self, i: RegimeId, label: Label) -> Vec<(f64, f64)> {
        self.runs(i, label).into_iter().map(|(a, b)| (self.grid.x(a), self.grid.x(b))).collect()
    }

    /// `self ⊆ other` on the impulse sets.
    pub fn impulse_subset_of(&self, other: &Region) -> bool {
        self.impulse.iter().zip(&other.impulse).all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}

impl TargetSet for Region {
    fn contains(&self, regime: RegimeId, x: f64) -> bool {
        self.in_impulse(regime, x)
    }
}

/// `I` = grid points with `ρ − m*ρ⁺ ≤ ε`.
pub fn extract_regions(fields: &ValueFields, epsilon: f64) -> Region {
    let impulse = fields
        .rho
        .iter()
        .zip(&fields.m_star)
        .map(|(rho, ms)| rho.iter().zip(ms).map(|(&r, &m)| r - m <= epsilon).collect())
        .collect();
    Region { grid: fields.grid, epsilon, impulse }
}
