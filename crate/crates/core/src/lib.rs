//! Worst-case analysis of the fixed-step gradient method on smooth functions
//! whose curvature lies in `[mu, L]` with `mu <= 0`.
//!
//! - [`rates`]: closed-form bounds, optimal steps and the conjectured
//!   long-step rates.
//! - [`pep`]: the performance estimation SDP that computes exact worst cases
//!   numerically.
//! - [`interpolation`]: checks whether oracle samples come from a function in
//!   the class, and evaluates an interpolating function.
//! - [`worstcase`]: explicit one-dimensional functions attaining the bounds.
//! - [`gmlab`]: a gradient-method runner, per-step certificates and test
//!   problems.

pub mod domain;
pub mod error;
pub mod gmlab;
pub mod interpolation;
pub mod pep;
pub mod rates;
pub mod worstcase;

pub use domain::{CurvatureClass, Kappa, NumeratorKind, OracleTriplet, Regime, StepSchedule, TripletSet};
pub use error::{Error, Result};
