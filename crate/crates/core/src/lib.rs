//! Two-level grouped panel generalized Pareto (GP) regression for
//! peaks over thresholds in panel data.
//!
//! The crate is organised bottom-up:
//!
//! - [`gpd`]: GP distribution primitives, analytic derivatives, return levels.
//! - [`panel`]: sparse excess panels, two-level group assignments, subject nets.
//! - [`estimate`]: composite log-likelihood and the block coordinate ascent fitter.
//! - [`covariance`]: dependence-window sandwich covariances and Wald intervals.
//! - [`groupsearch`]: multi-step maximization, BIC selection, hierarchical merging.
//! - [`simgen`]: the simulation data-generating process and replication studies.
//! - [`cli`]: command implementations behind the `gpgroup` binary.

// Index loops mirror the matrix formulas; `!(a > b)` comparisons
// deliberately treat NaN as failing.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covariance;
pub mod error;
pub mod estimate;
pub mod gpd;
pub mod groupsearch;
pub mod io;
pub mod optim;
pub mod panel;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
pub use estimate::{FitResult, RegressionParams};
pub use gpd::GpParams;
pub use panel::{ExcessPanel, GroupAssignment, SubjectNet};
