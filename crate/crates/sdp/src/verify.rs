//! Independent recheck of a candidate solution against its problem.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::problem::{Sense, SdpProblem, SdpSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Most negative constraint slack, reported as a nonnegative violation.
    pub max_violation: f64,
    pub worst_constraint: Option<usize>,
    pub min_gram_eigenvalue: f64,
    /// Smallest eigenvalue of the dual slack matrix rebuilt from the duals.
    pub min_dual_eigenvalue: f64,
    pub min_dual: f64,
    /// Violation of the stationarity condition on the free variables.
    pub free_residual: f64,
    /// `<Z, G> + sum_k y_k slack_k`, relative to the objective scale.
    pub complementarity: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative primal-dual objective gap.
    pub gap: f64,
    pub primal_feasible: bool,
    pub dual_feasible: bool,
    pub optimal: bool,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.primal_feasible && self.dual_feasible && self.optimal
    }
}

fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut m = DMatrix::from_row_slice(n, n, a);
    m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rechecks primal feasibility, dual feasibility, complementary slackness and
/// the duality gap of `solution`, using only the problem data.
pub fn verify_solution(problem: &SdpProblem, solution: &SdpSolution, tol: f64) -> VerificationReport {
    let n = problem.gram_dim;
    let sign = match problem.objective.sense {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    let slacks: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| c.evaluate(&solution.gram, &solution.linear_values))
        .collect();
    let (worst_constraint, min_slack) = slacks
        .iter()
        .copied()
        .enumerate()
        .fold((None, f64::INFINITY), |(bi, bv), (i, v)| {
            if v < bv {
                (Some(i), v)
            } else {
                (bi, bv)
            }
        });
    let max_violation = if min_slack.is_finite() { (-min_slack).max(0.0) } else { 0.0 };
    let min_gram_eigenvalue = min_eigenvalue(&solution.gram, n);

    // Z = sign * C0 - sum_k y_k A_k; stationarity in the free variables is
    // sign * d = sum_k y_k b_k.
    let mut z = match &problem.objective.gram {
        Some(c) => c.iter().map(|v| sign * v).collect::<Vec<_>>(),
        None => vec![0.0; n * n],
    };
    let mut stationarity: std::collections::BTreeMap<&str, f64> = problem
        .vars
        .iter()
        .map(|v| (v.as_str(), sign * problem.objective.lin.get(v).copied().unwrap_or(0.0)))
        .collect();
    for (c, y) in problem.constraints.iter().zip(&solution.duals) {
        for (zi, ai) in z.iter_mut().zip(&c.a) {
            *zi -= y * ai;
        }
        for (name, coef) in &c.lin {
            if let Some(v) = stationarity.get_mut(name.as_str()) {
                *v -= y * coef;
            }
        }
    }
    let min_dual_eigenvalue = min_eigenvalue(&z, n);
    let min_dual = solution.duals.iter().copied().fold(f64::INFINITY, f64::min);
    let free_residual = stationarity.values().fold(0.0_f64, |a, v| a.max(v.abs()));

    let primal_objective = problem.objective.evaluate(&solution.gram, &solution.linear_values);
    let dual_objective = -sign
        * problem
            .constraints
            .iter()
            .zip(&solution.duals)
            .map(|(c, y)| y * c.constant)
            .sum::<f64>();
    let scale = 1.0 + primal_objective.abs() + dual_objective.abs();
    let zg: f64 = z.iter().zip(&solution.gram).map(|(a, b)| a * b).sum();
    let ys: f64 = solution.duals.iter().zip(&slacks).map(|(y, s)| y * s).sum();
    let complementarity = (zg + ys).abs() / scale;
    let gap = (primal_objective - dual_objective).abs() / scale;

    let min_dual_ok = if min_dual.is_finite() { min_dual >= -tol } else { true };
    VerificationReport {
        max_violation,
        worst_constraint: if max_violation > 0.0 { worst_constraint } else { None },
        min_gram_eigenvalue,
        min_dual_eigenvalue,
        min_dual,
        free_residual,
        complementarity,
        primal_objective,
        dual_objective,
        gap,
        primal_feasible: max_violation <= tol && min_gram_eigenvalue >= -tol,
        dual_feasible: min_dual_eigenvalue >= -tol && min_dual_ok && free_residual <= tol,
        optimal: gap <= tol && complementarity <= tol,
    }
}
