//! Problem and solution containers.
//!
//! A problem has one symmetric positive semidefinite matrix variable `G`
//! (the Gram matrix, `gram_dim × gram_dim`) and a list of named free scalar
//! variables. Every constraint is an affine inequality
//!
//! ```text
//! <A, G> + sum_v lin[v] * v + const >= 0
//! ```
//!
//! with `A` symmetric and stored dense, row-major.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::SdpError;

/// One affine inequality `<A, G> + lin . y + const >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Row-major `gram_dim × gram_dim` symmetric coefficient matrix.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    /// Coefficients on the free scalar variables, keyed by variable name.
    pub lin: BTreeMap<String, f64>,
    /// Constant term.
    #[serde(rename = "const")]
    pub constant: f64,
    /// Optional human-readable tag (e.g. `interp(0,1)`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Constraint {
    pub fn zeros(gram_dim: usize) -> Self {
        Self {
            a: vec![0.0; gram_dim * gram_dim],
            lin: BTreeMap::new(),
            constant: 0.0,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Adds `coef` to variable `name`.
    pub fn add_lin(&mut self, name: &str, coef: f64) {
        *self.lin.entry(name.to_string()).or_insert(0.0) += coef;
    }

    /// Evaluates the left-hand side at a candidate point.
    pub fn evaluate(&self, gram: &[f64], values: &BTreeMap<String, f64>) -> f64 {
        let quad: f64 = self.a.iter().zip(gram).map(|(a, g)| a * g).sum();
        let lin: f64 = self
            .lin
            .iter()
            .map(|(k, c)| c * values.get(k).copied().unwrap_or(0.0))
            .sum();
        quad + lin + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

/// Linear objective in the free variables, optionally plus `<C, G>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    pub lin: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<Vec<f64>>,
}

impl Objective {
    pub fn maximize(var: &str) -> Self {
        Self {
            sense: Sense::Maximize,
            lin: BTreeMap::from([(var.to_string(), 1.0)]),
            gram: None,
        }
    }

    pub fn evaluate(&self, gram: &[f64], values: &BTreeMap<String, f64>) -> f64 {
        let quad: f64 = match &self.gram {
            Some(c) => c.iter().zip(gram).map(|(a, g)| a * g).sum(),
            None => 0.0,
        };
        let lin: f64 = self
            .lin
            .iter()
            .map(|(k, c)| c * values.get(k).copied().unwrap_or(0.0))
            .sum();
        quad + lin
    }
}

/// A small dense semidefinite program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub gram_dim: usize,
    /// Names of the free scalar variables, in solver order.
    pub vars: Vec<String>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

impl SdpProblem {
    /// Checks dimensions, symmetry and variable references.
    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.gram_dim;
        if n == 0 || n > crate::MAX_GRAM_DIM {
            return Err(SdpError::BadDimension(n));
        }
        let check_matrix = |a: &[f64], what: &str| -> Result<(), SdpError> {
            if a.len() != n * n {
                return Err(SdpError::Malformed(format!(
                    "{what}: matrix has {} entries, expected {}",
                    a.len(),
                    n * n
                )));
            }
            for i in 0..n {
                for j in 0..i {
                    let (x, y) = (a[i * n + j], a[j * n + i]);
                    if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                        return Err(SdpError::Malformed(format!(
                            "{what}: matrix is not symmetric at ({i},{j})"
                        )));
                    }
                }
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(SdpError::Malformed(format!("{what}: non-finite entry")));
            }
            Ok(())
        };
        let known = |name: &str| self.vars.iter().any(|v| v == name);
        for (k, c) in self.constraints.iter().enumerate() {
            let what = format!("constraint {k}");
            check_matrix(&c.a, &what)?;
            if let Some(name) = c.lin.keys().find(|name| !known(name)) {
                return Err(SdpError::UnknownVariable(name.clone()));
            }
            if !c.constant.is_finite() || c.lin.values().any(|v| !v.is_finite()) {
                return Err(SdpError::Malformed(format!("{what}: non-finite coefficient")));
            }
        }
        if let Some(c) = &self.objective.gram {
            check_matrix(c, "objective")?;
        }
        if let Some(name) = self.objective.lin.keys().find(|name| !known(name)) {
            return Err(SdpError::UnknownVariable(name.clone()));
        }
        Ok(())
    }

    /// Returns a copy whose constraint constants are multiplied by `factor`.
    pub fn scale_constants(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.constraints {
            c.constant *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

/// Solver output. `gram` is row-major; `duals` has one nonnegative
/// multiplier per constraint, in problem order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub objective: f64,
    pub dual_objective: f64,
    pub gram: Vec<f64>,
    pub gram_dim: usize,
    pub linear_values: BTreeMap<String, f64>,
    pub duals: Vec<f64>,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn value(&self, var: &str) -> Option<f64> {
        self.linear_values.get(var).copied()
    }

    pub fn gram_entry(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.gram_dim + j]
    }
}
