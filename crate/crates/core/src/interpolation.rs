//! Interpolation conditions for `F_{mu,L}` and the explicit interpolant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{dot, norm_sq, sub, CurvatureClass, Kappa, OracleTriplet, TripletSet};
use crate::error::{Error, Result};

/// Coefficients of the pairwise condition
///
/// ```text
/// f_i - f_j - <g_j, x_i - x_j> - gg |g_i - g_j|^2 - xx |x_i - x_j|^2
///     + gx <g_j - g_i, x_j - x_i> >= 0
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpCoeffs {
    pub gg: f64,
    pub xx: f64,
    pub gx: f64,
}

impl InterpCoeffs {
    pub fn new(cls: &CurvatureClass) -> Result<Self> {
        let l = cls.l();
        match cls.kappa() {
            Kappa::NegInfinity => Ok(Self {
                gg: 0.0,
                xx: -l / 2.0,
                gx: -1.0,
            }),
            Kappa::Finite(k) => {
                if k >= 1.0 {
                    return Err(Error::DegenerateClass);
                }
                Ok(Self {
                    gg: 1.0 / (2.0 * l * (1.0 - k)),
                    xx: k * l / (2.0 * (1.0 - k)),
                    gx: k / (1.0 - k),
                })
            }
        }
    }

    pub fn slack(&self, ti: &OracleTriplet, tj: &OracleTriplet) -> f64 {
        let dx = sub(&ti.x, &tj.x);
        let dg = sub(&ti.g, &tj.g);
        // <g_j - g_i, x_j - x_i> = <dg, dx>
        ti.f - tj.f - dot(&tj.g, &dx) - self.gg * norm_sq(&dg) - self.xx * norm_sq(&dx)
            + self.gx * dot(&dg, &dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub feasible: bool,
    /// Smallest pairwise slack; zero when there are no pairs.
    pub worst_violation: f64,
    /// Pair attaining the worst slack, when it is below `-tol`.
    pub violating_pair: Option<(usize, usize)>,
    pub f_star: f64,
    pub i_star: usize,
    pub x_star: Vec<f64>,
}

/// Checks every ordered pair `(i, j)`, `i != j`, and locates the global
/// minimum the interpolating function would have.
pub fn check_interpolable(ts: &TripletSet, cls: &CurvatureClass, tol: f64) -> Result<InterpolationReport> {
    if ts.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    let coeffs = InterpCoeffs::new(cls)?;
    let t = ts.triplets();
    let mut worst = 0.0;
    let mut worst_pair = None;
    for (i, ti) in t.iter().enumerate() {
        for (j, tj) in t.iter().enumerate() {
            if i == j {
                continue;
            }
            let s = coeffs.slack(ti, tj);
            if worst_pair.is_none() || s < worst {
                worst = s;
                worst_pair = Some((i, j));
            }
        }
    }
    let (f_star, x_star, i_star) = star(ts, cls.l());
    let feasible = worst >= -tol;
    Ok(InterpolationReport {
        feasible,
        worst_violation: worst,
        violating_pair: if feasible { None } else { worst_pair },
        f_star,
        i_star,
        x_star,
    })
}

/// `f_* = min_i f_i - |g_i|^2 / (2L)` with its index and `x_* = x_i - g_i / L`.
fn star(ts: &TripletSet, l: f64) -> (f64, Vec<f64>, usize) {
    let (i_star, f_star) = ts
        .triplets()
        .iter()
        .map(|t| t.f - norm_sq(&t.g) / (2.0 * l))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let t = &ts.triplets()[i_star];
    let x_star = t.x.iter().zip(&t.g).map(|(x, g)| x - g / l).collect();
    (f_star, x_star, i_star)
}

/// Maps `(x, g, f)` to `(x, g - mu x, f - mu |x|^2 / 2)`. The image is
/// `(0, L - mu)`-interpolable exactly when the input is `(mu, L)`-interpolable.
pub fn shift_to_convex(ts: &TripletSet, mu: f64) -> TripletSet {
    let triplets = ts
        .triplets()
        .iter()
        .map(|t| OracleTriplet {
            x: t.x.clone(),
            g: t.g.iter().zip(&t.x).map(|(g, x)| g - mu * x).collect(),
            f: t.f - 0.5 * mu * norm_sq(&t.x),
        })
        .collect();
    TripletSet::new(ts.dim(), triplets).expect("shift keeps dimensions")
}

/// Largest support size solved by enumerating all supports.
const ENUMERATION_LIMIT: usize = 12;
const KKT_TOL: f64 = 1e-10;

/// Simplex quadratic `a'Ha/2 + b'a + c` describing the interpolant at `y`.
struct SimplexQp {
    h: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl SimplexQp {
    fn new(ts: &TripletSet, cls: &CurvatureClass, y: &[f64]) -> Self {
        let l = cls.l();
        // ratio = kappa / (1 - kappa)
        let ratio = match cls.kappa() {
            Kappa::Finite(k) => k / (1.0 - k),
            Kappa::NegInfinity => -1.0,
        };
        let n = ts.len();
        let d = ts.dim();
        let cols: Vec<Vec<f64>> = ts
            .triplets()
            .iter()
            .map(|t| t.x.iter().zip(&t.g).map(|(x, g)| x - g / l).collect())
            .collect();
        let cmat = DMatrix::from_fn(d, n, |r, c| cols[c][r]);
        let w = DVector::from_iterator(
            n,
            ts.triplets()
                .iter()
                .zip(&cols)
                .map(|(t, c)| t.f - norm_sq(&t.g) / (2.0 * l) - 0.5 * l * ratio * norm_sq(c)),
        );
        let yv = DVector::from_column_slice(y);
        let mut h = cmat.transpose() * &cmat * (l * (1.0 + ratio));
        h = (&h + h.transpose()) * 0.5;
        Self {
            h,
            b: w - cmat.transpose() * yv * l,
            c: 0.5 * l * norm_sq(y),
        }
    }

    fn value(&self, a: &DVector<f64>) -> f64 {
        0.5 * a.dot(&(&self.h * a)) + self.b.dot(a) + self.c
    }

    /// Complementarity-style residual: with `lambda = min_i grad_i`, every
    /// coordinate with positive weight must have `grad_i = lambda`.
    fn kkt_residual(&self, a: &DVector<f64>) -> f64 {
        let grad = &self.h * a + &self.b;
        let lambda = grad.min();
        let scale = 1.0 + self.b.amax() + self.h.amax();
        let comp = a
            .iter()
            .zip(grad.iter())
            .map(|(ai, gi)| ai.max(0.0) * (gi - lambda))
            .fold(0.0, f64::max);
        let infeas = (a.sum() - 1.0).abs() + a.iter().map(|v| (-v).max(0.0)).sum::<f64>();
        comp / scale + infeas
    }
}

/// Evaluates the interpolating function at `y`. Returns the value and the
/// simplex weights of the minimizing combination.
pub fn eval_interpolating(ts: &TripletSet, cls: &CurvatureClass, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if ts.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    if y.len() != ts.dim() {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: ts.dim(),
            got: y.len(),
        });
    }
    let scale = 1.0
        + ts.triplets()
            .iter()
            .map(|t| t.f.abs() + norm_sq(&t.g) / cls.l() + cls.l() * norm_sq(&t.x))
            .fold(0.0, f64::max);
    let report = check_interpolable(ts, cls, 1e-9 * scale)?;
    if !report.feasible {
        return Err(Error::NotInterpolable {
            worst_violation: report.worst_violation,
        });
    }
    let qp = SimplexQp::new(ts, cls, y);
    let alpha = if ts.len() <= ENUMERATION_LIMIT {
        enumerate_supports(&qp)
    } else {
        projected_gradient(&qp)
    };
    let residual = qp.kkt_residual(&alpha);
    if !(residual < KKT_TOL) {
        return Err(Error::SolverStall(residual));
    }
    Ok((qp.value(&alpha), alpha.iter().copied().collect()))
}

fn enumerate_supports(qp: &SimplexQp) -> DVector<f64> {
    let n = qp.b.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                kkt[(r, c)] = qp.h[(i, j)];
            }
            kkt[(r, k)] = 1.0;
            kkt[(k, r)] = 1.0;
            rhs[r] = -qp.b[i];
        }
        rhs[k] = 1.0;
        let Ok(pinv) = kkt.pseudo_inverse(1e-13 * (1.0 + qp.h.amax())) else {
            continue;
        };
        let sol = pinv * rhs;
        if sol.rows(0, k).iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut alpha = DVector::zeros(n);
        for (r, &i) in support.iter().enumerate() {
            alpha[i] = sol[r].max(0.0);
        }
        let total = alpha.sum();
        if !(total > 0.0) {
            continue;
        }
        alpha /= total;
        let v = qp.value(&alpha);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, alpha));
        }
    }
    best.map(|(_, a)| a).unwrap_or_else(|| DVector::from_element(n, 1.0 / n as f64))
}

/// Euclidean projection onto the unit simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn projected_gradient(qp: &SimplexQp) -> DVector<f64> {
    let n = qp.b.len();
    let lip = qp.h.norm().max(1e-12);
    let mut a = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..200_000 {
        let grad = &qp.h * &a + &qp.b;
        let target = project_simplex(&(&a - &grad / lip));
        let dir = target - &a;
        if dir.amax() == 0.0 {
            break;
        }
        // Exact minimizer along the segment [a, target].
        let curv = dir.dot(&(&qp.h * &dir));
        let slope = grad.dot(&dir);
        let t = if curv > 0.0 { (-slope / curv).clamp(0.0, 1.0) } else { 1.0 };
        a += dir * t;
        if qp.kkt_residual(&a) < 0.1 * KKT_TOL {
            break;
        }
    }
    a
}

/// Checks `mu/2 |x-y|^2 <= f(x) - f(y) - <grad f(y), x-y> <= L/2 |x-y|^2`
/// at every pair, with slack `tol * (1 + |f(x)| + |f(y)|)`.
pub fn quadratic_bounds_check(
    f_eval: &dyn Fn(&[f64]) -> f64,
    grad_eval: &dyn Fn(&[f64]) -> Vec<f64>,
    cls: &CurvatureClass,
    sample_pairs: &[(Vec<f64>, Vec<f64>)],
    tol: f64,
) -> bool {
    sample_pairs.iter().all(|(x, y)| {
        let (fx, fy) = (f_eval(x), f_eval(y));
        let d = sub(x, y);
        let gap = fx - fy - dot(&grad_eval(y), &d);
        let r2 = norm_sq(&d);
        let slack = tol * (1.0 + fx.abs() + fy.abs());
        let upper = gap <= 0.5 * cls.l() * r2 + slack;
        let lower = match cls.mu() {
            Some(mu) => gap >= 0.5 * mu * r2 - slack,
            None => true,
        };
        upper && lower
    })
}
