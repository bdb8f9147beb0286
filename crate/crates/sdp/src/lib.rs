//! Dense semidefinite programming for performance-estimation problems.
//!
//! The solver targets the small programs (Gram dimension of a dozen or so)
//! produced when the worst case of a first-order method is lifted to a Gram
//! matrix. Everything is dense; there is no sparsity exploitation and no warm
//! start.

mod problem;
mod solver;
mod verify;

pub use problem::{Constraint, KktResiduals, Objective, SdpProblem, SdpSolution, Sense, SolveStatus};
pub use solver::{solve, SolverOptions};
pub use verify::{verify_solution, VerificationReport};

/// Largest Gram dimension accepted by [`solve`].
pub const MAX_GRAM_DIM: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SdpError {
    #[error("gram dimension {0} is outside 1..=64")]
    BadDimension(usize),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("constraint references unknown variable `{0}`")]
    UnknownVariable(String),
}
