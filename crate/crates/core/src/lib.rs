//! Optimal technology switching as an impulse-control problem: a firm's log
//! value diffuses under the current technology, and at chosen times the firm
//! pays a cost to switch technology and jump its state.
//!
//! The crate solves the quasi-variational inequality for the value
//! functions on a grid ([`solver`]), extracts the impulse and continuation
//! regions ([`region`]), simulates strategies ([`strategy`]) and checks the
//! results against Monte Carlo, the per-cycle profit/cost recurrences and
//! the optimality criterion ([`montecarlo`], [`fseries`], [`audit`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod config;
pub mod diffusion;
pub mod fseries;
pub mod grid;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod parallel;
pub mod quadrature;
pub mod region;
pub mod rng;
pub mod solver;
pub mod strategy;

pub use grid::Grid;
pub use model::{validate_spec, ProblemSpec, RegimeId, ValidatedSpec};
pub use region::{extract_regions, Region};
pub use solver::{QviSolver, SolverConfig, ValueFields};
