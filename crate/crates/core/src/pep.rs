//! Performance estimation of the fixed-step gradient method as an SDP.
//!
//! The Gram matrix is taken over the basis `[g_0, ..., g_N, x_0]`; iterates
//! are eliminated through `x_i = x_0 - (1/L) sum_{k<i} h_k g_k`. The optimal
//! point is pinned at `x_* = 0`, `g_* = 0`, `f_* = 0`; for the gap to the last
//! iterate `f_N = 0` is pinned instead. Pinned values are substituted, not
//! added as variables.

use hypopep_sdp::{Constraint, Objective, SdpProblem, SdpSolution, SolveStatus, SolverOptions};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::{CurvatureClass, NumeratorKind, OracleTriplet, StepSchedule, TripletSet};
use crate::error::{Error, Result};
use crate::interpolation::{check_interpolable, InterpCoeffs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepProblem {
    pub cls: CurvatureClass,
    pub sched: StepSchedule,
    pub delta: f64,
    pub init_kind: NumeratorKind,
}

impl PepProblem {
    pub fn new(cls: CurvatureClass, sched: StepSchedule, delta: f64, init_kind: NumeratorKind) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self {
            cls,
            sched,
            delta,
            init_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.sched.n()
    }

    pub fn gram_dim(&self) -> usize {
        self.n() + 2
    }
}

/// Name of the value variable of iterate `i`.
pub fn f_var(i: usize) -> String {
    format!("f{i}")
}

pub const F_STAR: &str = "f_star";
pub const BOUND_VAR: &str = "l";

/// A point in the PEP: coordinates of `x` and `g` in the Gram basis, and the
/// name of its value variable (`None` when pinned to zero).
struct Point {
    x: Vec<f64>,
    g: Vec<f64>,
    f: Option<String>,
}

/// Coordinates of iterates and gradients in the Gram basis.
fn points(p: &PepProblem) -> Vec<Point> {
    let n = p.n();
    let dim = p.gram_dim();
    let l = p.cls.l();
    let mut x = vec![0.0; dim];
    x[n + 1] = 1.0;
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..=n {
        let mut g = vec![0.0; dim];
        g[i] = 1.0;
        let pinned = i == n && p.init_kind == NumeratorKind::GapToLast;
        out.push(Point {
            x: x.clone(),
            g,
            f: (!pinned).then(|| f_var(i)),
        });
        if i < n {
            x[i] -= p.sched.steps()[i] / l;
        }
    }
    if p.init_kind == NumeratorKind::GapToOptimal {
        out.push(Point {
            x: vec![0.0; dim],
            g: vec![0.0; dim],
            f: None,
        });
    }
    out
}

/// Adds `coef * <a, b>` to the symmetric coefficient matrix `m`.
fn add_inner(m: &mut [f64], dim: usize, a: &[f64], b: &[f64], coef: f64) {
    for r in 0..dim {
        if a[r] == 0.0 && b[r] == 0.0 {
            continue;
        }
        for c in 0..dim {
            let v = 0.5 * coef * (a[r] * b[c] + b[r] * a[c]);
            if v != 0.0 {
                m[r * dim + c] += v;
            }
        }
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn add_value(c: &mut Constraint, f: &Option<String>, coef: f64) {
    if let Some(name) = f {
        c.add_lin(name, coef);
    }
}

/// Assembles the SDP. Row order: interpolation pairs in lexicographic
/// `(i, j)` order, the descent-to-optimum rows (gap to optimum only), the
/// initial condition, then `|g_i|^2 >= l`.
pub fn build_sdp(p: &PepProblem) -> Result<SdpProblem> {
    let coeffs = InterpCoeffs::new(&p.cls)?;
    let dim = p.gram_dim();
    let n = p.n();
    let l = p.cls.l();
    let pts = points(p);

    let mut vars: Vec<String> = pts.iter().filter_map(|pt| pt.f.clone()).collect();
    vars.push(BOUND_VAR.to_string());

    let mut constraints = Vec::new();
    for (i, pi) in pts.iter().enumerate() {
        for (j, pj) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut c = Constraint::zeros(dim).with_label(format!("interp({i},{j})"));
            add_value(&mut c, &pi.f, 1.0);
            add_value(&mut c, &pj.f, -1.0);
            let dx = diff(&pi.x, &pj.x);
            let dg = diff(&pi.g, &pj.g);
            add_inner(&mut c.a, dim, &pj.g, &dx, -1.0);
            add_inner(&mut c.a, dim, &dg, &dg, -coeffs.gg);
            add_inner(&mut c.a, dim, &dx, &dx, -coeffs.xx);
            add_inner(&mut c.a, dim, &dg, &dx, coeffs.gx);
            constraints.push(c);
        }
    }
    if p.init_kind == NumeratorKind::GapToOptimal {
        for (i, pt) in pts.iter().take(n + 1).enumerate() {
            let mut c = Constraint::zeros(dim).with_label(format!("descent({i})"));
            add_value(&mut c, &pt.f, 1.0);
            add_inner(&mut c.a, dim, &pt.g, &pt.g, -1.0 / (2.0 * l));
            constraints.push(c);
        }
    }
    // f_0 - f_ref <= delta with f_ref pinned to zero.
    let mut init = Constraint::zeros(dim).with_label("initial");
    add_value(&mut init, &pts[0].f, -1.0);
    init.constant = p.delta;
    constraints.push(init);
    for (i, pt) in pts.iter().take(n + 1).enumerate() {
        let mut c = Constraint::zeros(dim).with_label(format!("grad({i})"));
        add_inner(&mut c.a, dim, &pt.g, &pt.g, 1.0);
        c.add_lin(BOUND_VAR, -1.0);
        constraints.push(c);
    }

    Ok(SdpProblem {
        gram_dim: dim,
        vars,
        constraints,
        objective: Objective::maximize(BOUND_VAR),
    })
}

/// Scale factors removed by [`normalize_homogeneous`]; worst-case values of
/// `min |g_i|^2` scale by `l * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub l: f64,
    pub delta: f64,
}

impl Rescale {
    pub fn factor(&self) -> f64 {
        self.l * self.delta
    }
}

pub fn normalize_homogeneous(p: &PepProblem) -> (PepProblem, Rescale) {
    let cls = CurvatureClass::from_kappa(p.cls.kappa(), 1.0).expect("kappa already validated");
    (
        PepProblem {
            cls,
            sched: p.sched.clone(),
            delta: 1.0,
            init_kind: p.init_kind,
        },
        Rescale {
            l: p.cls.l(),
            delta: p.delta,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepSolution {
    /// Worst-case `min_i |g_i|^2`.
    pub value: f64,
    pub status: SolveStatus,
    pub sdp: SdpSolution,
}

impl PepSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Builds and solves the SDP. A non-optimal status is returned, not raised;
/// callers decide whether it is acceptable.
pub fn solve_pep(p: &PepProblem, opts: &SolverOptions) -> Result<PepSolution> {
    let sdp = build_sdp(p)?;
    let sol = hypopep_sdp::solve(&sdp, opts).map_err(|e| Error::Sdp(e.to_string()))?;
    Ok(PepSolution {
        value: sol.objective,
        status: sol.status,
        sdp: sol,
    })
}

/// Eigenvalues below this are reported as an indefinite Gram matrix.
const INDEFINITE_TOL: f64 = 1e-6;
/// Relative eigenvalue cutoff for the numerical rank.
const RANK_TOL: f64 = 1e-8;

/// Factors the Gram matrix and rebuilds explicit triplets, appending the
/// optimal point for the gap-to-optimum variant.
pub fn extract_triplets(p: &PepProblem, sol: &SdpSolution) -> Result<TripletSet> {
    let dim = p.gram_dim();
    if sol.gram_dim != dim || sol.gram.len() != dim * dim {
        return Err(Error::InvalidData(format!(
            "solution has Gram dimension {}, expected {dim}",
            sol.gram_dim
        )));
    }
    let mut g = DMatrix::from_row_slice(dim, dim, &sol.gram);
    g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let min = eig.eigenvalues.min();
    if min < -INDEFINITE_TOL {
        return Err(Error::IndefiniteGram(min));
    }
    let cutoff = RANK_TOL * eig.eigenvalues.max().max(1.0);
    let kept: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > cutoff).collect();
    let d = kept.len().max(1);
    // Column b of `factor` is the vector of basis element b.
    let mut factor = DMatrix::zeros(d, dim);
    for (r, &k) in kept.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for b in 0..dim {
            factor[(r, b)] = s * eig.eigenvectors[(b, k)];
        }
    }
    let embed = |coords: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|r| (0..dim).map(|b| factor[(r, b)] * coords[b]).sum())
            .collect()
    };
    let triplets = points(p)
        .into_iter()
        .map(|pt| OracleTriplet {
            x: embed(&pt.x),
            g: embed(&pt.g),
            f: pt.f.as_deref().and_then(|name| sol.value(name)).unwrap_or(0.0),
        })
        .collect();
    let ts = TripletSet::new(d, triplets)?;
    let report = check_interpolable(&ts, &p.cls, 1e-6)?;
    if !report.feasible {
        return Err(Error::InterpolationFailure(report.worst_violation));
    }
    Ok(ts)
}

/// Numerical rank of a solution's Gram matrix, as used by [`extract_triplets`].
pub fn gram_rank(sol: &SdpSolution) -> usize {
    let dim = sol.gram_dim;
    let g = DMatrix::from_row_slice(dim, dim, &sol.gram);
    let eig = SymmetricEigen::new((&g + g.transpose()) * 0.5);
    let cutoff = RANK_TOL * eig.eigenvalues.max().max(1.0);
    eig.eigenvalues.iter().filter(|&&v| v > cutoff).count()
}
