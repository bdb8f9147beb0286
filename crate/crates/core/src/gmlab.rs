//! Fixed-step gradient method runs, per-step certificates and test problems.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{norm_sq, validate_class, CurvatureClass, Kappa, NumeratorKind, OracleTriplet, StepSchedule};
use crate::error::{Error, Result};
use crate::rates::{nstep_bound, p_unchecked};

/// A differentiable function on `R^d`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// A function with declared curvature bounds and a starting point.
pub struct TestProblem {
    pub name: String,
    pub objective: Box<dyn Objective>,
    pub cls: CurvatureClass,
    pub x0: Vec<f64>,
    pub f_star_known: Option<f64>,
}

impl std::fmt::Debug for TestProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestProblem")
            .field("name", &self.name)
            .field("cls", &self.cls)
            .field("x0", &self.x0)
            .field("f_star_known", &self.f_star_known)
            .finish()
    }
}

impl TestProblem {
    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iterates: Vec<OracleTriplet>,
    pub sched: StepSchedule,
    pub l: f64,
    pub min_grad_sq: f64,
    pub min_grad_index: usize,
}

impl Trajectory {
    pub fn grad_norms_sq(&self) -> Vec<f64> {
        self.iterates.iter().map(|t| norm_sq(&t.g)).collect()
    }
}

/// Runs `x_{i+1} = x_i - (h_i / L) g_i` on any objective.
pub fn run_gm_on(obj: &dyn Objective, l: f64, x0: &[f64], sched: &StepSchedule) -> Result<Trajectory> {
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    let mut iterates = Vec::with_capacity(sched.n() + 1);
    let mut x = x0.to_vec();
    for i in 0..=sched.n() {
        let f = obj.value(&x);
        let g = obj.grad(&x);
        if !f.is_finite() || g.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        let next = (i < sched.n()).then(|| {
            let step = sched.steps()[i] / l;
            x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect::<Vec<f64>>()
        });
        iterates.push(OracleTriplet { x, g, f });
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    let (min_grad_index, min_grad_sq) = iterates
        .iter()
        .map(|t| norm_sq(&t.g))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(Trajectory {
        iterates,
        sched: sched.clone(),
        l,
        min_grad_sq,
        min_grad_index,
    })
}

pub fn run_gm(tp: &TestProblem, sched: &StepSchedule) -> Result<Trajectory> {
    run_gm_on(tp.objective.as_ref(), tp.cls.l(), &tp.x0, sched)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `f_0 - f_1 - P(h) min(|g_0|^2, |g_1|^2)`
    pub one_step_slack: f64,
    /// `f_0 - f_1 - h (2 - h) / (2L) |g_0|^2`
    pub descent_slack: f64,
    /// Slack of the weighted two-gradient inequality; only for `h >= 1`.
    pub weighted_slack: Option<f64>,
    pub pass: bool,
}

/// Checks the one-step inequalities for a step `t0 -> t1` of size `h / L`.
/// Slacks must be at least `-tol (1 + |f_0| + |f_1|)`.
pub fn one_step_certificate(
    t0: &OracleTriplet,
    t1: &OracleTriplet,
    h: f64,
    cls: &CurvatureClass,
    tol: f64,
) -> CertificateReport {
    let l = cls.l();
    let kappa = cls.kappa();
    let decrease = t0.f - t1.f;
    let (g0, g1) = (norm_sq(&t0.g), norm_sq(&t1.g));
    let one_step_slack = decrease - p_unchecked(h, kappa) / (2.0 * l) * g0.min(g1);
    let descent_slack = decrease - h * (2.0 - h) / (2.0 * l) * g0;
    let weighted_slack = (h >= 1.0).then(|| match kappa {
        Kappa::Finite(k) => {
            let den = 2.0 * l * (2.0 - h * (1.0 + k));
            let c0 = h * (k * h * h - 2.0 * h * (1.0 + k) + 3.0) / den;
            let c1 = h / den;
            decrease - c0 * g0 - c1 * g1
        }
        // Both weights collapse onto the descent lemma.
        Kappa::NegInfinity => descent_slack,
    });
    let floor = -tol * (1.0 + t0.f.abs() + t1.f.abs());
    let pass = one_step_slack >= floor && descent_slack >= floor && weighted_slack.is_none_or(|s| s >= floor);
    CertificateReport {
        one_step_slack,
        descent_slack,
        weighted_slack,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The class is not convex, so the inequality is not expected to hold.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub status: CheckStatus,
    /// Smallest `|g_i|^2 - |g_{i+1}|^2 - ((2 - h_i) / h_i) |g_i - g_{i+1}|^2`.
    pub worst_slack: f64,
    pub worst_index: Option<usize>,
}

/// For convex functions every step satisfies
/// `|g_0|^2 - |g_1|^2 >= ((2 - h) / h) |g_0 - g_1|^2`.
pub fn convex_grad_monotonicity(traj: &Trajectory, cls: &CurvatureClass, tol: f64) -> MonotonicityReport {
    if cls.mu() != Some(0.0) {
        return MonotonicityReport {
            status: CheckStatus::NotApplicable,
            worst_slack: f64::NAN,
            worst_index: None,
        };
    }
    let mut worst = f64::INFINITY;
    let mut worst_index = None;
    for (i, pair) in traj.iterates.windows(2).enumerate() {
        let h = traj.sched.steps()[i];
        let (a, b) = (&pair[0].g, &pair[1].g);
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let slack = norm_sq(a) - norm_sq(b) - (2.0 - h) / h * norm_sq(&d);
        if slack < worst {
            worst = slack;
            worst_index = Some(i);
        }
    }
    MonotonicityReport {
        status: if worst >= -tol { CheckStatus::Pass } else { CheckStatus::Fail },
        worst_slack: worst,
        worst_index,
    }
}

/// Largest eigenvalue of `A'A` by power iteration.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let ata = a.transpose() * a;
    // Deterministic start that is not orthogonal to a generic top eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w = &ata * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= 1e-13 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// `H_delta(|Ax - b|) + (mu / 2) |x|^2`, with `H_delta(r) = r^2 / (2 delta)`
/// for `r <= delta` and `r - delta / 2` beyond.
#[derive(Debug, Clone)]
pub struct HuberNorm {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub delta: f64,
    pub mu: f64,
}

impl Objective for HuberNorm {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let r = (&self.a * &xv - &self.b).norm();
        let h = if r <= self.delta {
            r * r / (2.0 * self.delta)
        } else {
            r - self.delta / 2.0
        };
        h + 0.5 * self.mu * xv.norm_squared()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let res = &self.a * &xv - &self.b;
        let r = res.norm();
        // The quadratic branch also covers r = 0.
        let scale = if r <= self.delta { 1.0 / self.delta } else { 1.0 / r };
        let g = self.a.transpose() * res * scale + xv * self.mu;
        g.iter().copied().collect()
    }
}

/// Huber-of-norm least squares with a (possibly negative) quadratic term.
///
/// The declared class is `(mu_reg, |A'A| / delta_h + mu_reg)`. Negative
/// `mu_reg` must keep the upper curvature positive; positive values are
/// rejected by class validation.
pub fn make_huber_problem(a: DMatrix<f64>, b: DVector<f64>, delta_h: f64, mu_reg: f64) -> Result<TestProblem> {
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    if b.len() != a.nrows() {
        return Err(Error::InvalidData(format!("b has {} entries, A has {} rows", b.len(), a.nrows())));
    }
    if !(delta_h > 0.0 && delta_h.is_finite()) {
        return Err(Error::InvalidData(format!("Huber delta must be positive, got {delta_h}")));
    }
    let l = spectral_norm_sq(&a) / delta_h + mu_reg;
    let cls = validate_class(mu_reg, l)?;
    let dim = a.ncols();
    Ok(TestProblem {
        name: "huber".into(),
        objective: Box::new(HuberNorm {
            a,
            b,
            delta: delta_h,
            mu: mu_reg,
        }),
        cls,
        x0: vec![0.0; dim],
        f_star_known: None,
    })
}

/// The `mu_reg` giving the Huber problem curvature ratio `kappa`.
pub fn huber_mu_for_kappa(a: &DMatrix<f64>, delta_h: f64, kappa: f64) -> f64 {
    kappa / (1.0 - kappa) * spectral_norm_sq(a) / delta_h
}

/// Smoothed `l0` penalty on a scalar, with parameters `0 < sigma < lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub lambda: f64,
    pub sigma: f64,
}

impl Envelope {
    pub fn new(lambda: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < lambda && lambda.is_finite()) {
            return Err(Error::BadEnvelopeParams { lambda, sigma });
        }
        Ok(Self { lambda, sigma })
    }

    /// Inner and outer breakpoints in `|x|`.
    pub fn breakpoints(&self) -> (f64, f64) {
        let outer = (2.0 * self.lambda).sqrt();
        ((1.0 - self.sigma / self.lambda) * outer, outer)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (inner, outer) = self.breakpoints();
        let ax = x.abs();
        if ax <= inner {
            x * x / (2.0 * (self.lambda - self.sigma))
        } else if ax <= outer {
            1.0 - (ax - outer).powi(2) / (2.0 * self.sigma)
        } else {
            1.0
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        let (inner, outer) = self.breakpoints();
        let ax = x.abs();
        if ax <= inner {
            x / (self.lambda - self.sigma)
        } else if ax <= outer {
            // The function is even, so the middle branch carries sign(x).
            -(ax - outer) / self.sigma * x.signum()
        } else {
            0.0
        }
    }

    pub fn class(&self) -> CurvatureClass {
        CurvatureClass::general(-1.0 / self.sigma, 1.0 / (self.lambda - self.sigma)).expect("valid by construction")
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `weight * sum_i envelope(x_i)`.
#[derive(Debug, Clone)]
pub struct LogisticL0 {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub envelope: Envelope,
    pub weight: f64,
}

impl Objective for LogisticL0 {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let z = &self.a * DVector::from_column_slice(x);
        let n = self.a.nrows() as f64;
        // -y log s(z) - (1 - y) log(1 - s(z)) = softplus(z) - y z
        let loss: f64 = z.iter().zip(self.y.iter()).map(|(z, y)| softplus(*z) - y * z).sum::<f64>() / n;
        loss + self.weight * x.iter().map(|&v| self.envelope.value(v)).sum::<f64>()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let z = &self.a * DVector::from_column_slice(x);
        let n = self.a.nrows() as f64;
        let r = DVector::from_iterator(z.len(), z.iter().zip(self.y.iter()).map(|(z, y)| sigmoid(*z) - y));
        let g = self.a.transpose() * r / n;
        g.iter()
            .zip(x)
            .map(|(gi, &xi)| gi + self.weight * self.envelope.grad(xi))
            .collect()
    }
}

/// Logistic regression with the smoothed `l0` penalty. Declared class
/// `[-w / sigma, |A'A| / N + w / (lambda - sigma)]` for weight `w`.
pub fn make_logistic_l0_problem(
    a: DMatrix<f64>,
    y: DVector<f64>,
    lambda_ll: f64,
    sigma_ll: f64,
    reg_weight: f64,
) -> Result<TestProblem> {
    let envelope = Envelope::new(lambda_ll, sigma_ll)?;
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    if y.len() != a.nrows() {
        return Err(Error::InvalidData(format!("y has {} entries, A has {} rows", y.len(), a.nrows())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData("labels must be 0 or 1".into()));
    }
    if !(reg_weight >= 0.0 && reg_weight.is_finite()) {
        return Err(Error::InvalidData(format!("regularization weight must be nonnegative, got {reg_weight}")));
    }
    let mu = -reg_weight / sigma_ll;
    let l = spectral_norm_sq(&a) / a.nrows() as f64 + reg_weight / (lambda_ll - sigma_ll);
    let cls = validate_class(if mu == 0.0 { 0.0 } else { mu }, l)?;
    let dim = a.ncols();
    Ok(TestProblem {
        name: "logistic_l0".into(),
        objective: Box::new(LogisticL0 {
            a,
            y,
            envelope,
            weight: reg_weight,
        }),
        cls,
        x0: vec![0.0; dim],
        f_star_known: None,
    })
}

/// Upper estimate of `f_*` from a long run with unit steps: the smallest of
/// `f_i - |g_i|^2 / (2L)` along the way. Not a certified lower bound.
pub fn estimate_f_star(tp: &TestProblem, iters: usize) -> Result<f64> {
    let sched = StepSchedule::constant(1.0, iters.max(1))?;
    let traj = run_gm(tp, &sched)?;
    let l = tp.cls.l();
    Ok(traj
        .iterates
        .iter()
        .map(|t| t.f - norm_sq(&t.g) / (2.0 * l))
        .fold(f64::INFINITY, f64::min))
}

/// Dense matrix from CSV. A first row that does not parse as numbers is
/// treated as a header.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidData(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(Error::InvalidData(format!("row {}: {e}", k + 1))),
        }
    }
    let Some(first) = rows.first() else {
        return Err(Error::InvalidData("no numeric rows".into()));
    };
    let cols = first.len();
    if let Some(k) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::InvalidData(format!("row {} has {} fields, expected {cols}", k + 1, rows[k].len())));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// A single column of values from CSV, header optional.
pub fn read_vector_csv<R: Read>(reader: R) -> Result<DVector<f64>> {
    let m = read_matrix_csv(reader)?;
    if m.ncols() != 1 {
        return Err(Error::InvalidData(format!("expected one column, found {}", m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

/// Writes `iter, h, f, grad_norm_sq, min_grad_norm_sq_so_far, bound_so_far`.
/// `h` is empty on the last row; the bound after `k` steps uses the first `k`
/// steps and is empty at `k = 0` or when a step is above the threshold.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    cls: &CurvatureClass,
    delta: f64,
    kind: NumeratorKind,
    out: W,
) -> Result<()> {
    let io = |e: csv::Error| Error::InvalidData(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "h", "f", "grad_norm_sq", "min_grad_norm_sq_so_far", "bound_so_far"])
        .map_err(io)?;
    let mut running = f64::INFINITY;
    for (i, t) in traj.iterates.iter().enumerate() {
        let g2 = norm_sq(&t.g);
        running = running.min(g2);
        let h = traj.sched.steps().get(i).map(|h| fmt_f64(*h)).unwrap_or_default();
        let bound = if i == 0 {
            String::new()
        } else {
            StepSchedule::new(traj.sched.steps()[..i].to_vec())
                .and_then(|s| nstep_bound(cls, &s, delta, kind))
                .map(|r| fmt_f64(r.bound))
                .unwrap_or_default()
        };
        w.write_record([i.to_string(), h, fmt_f64(t.f), fmt_f64(g2), fmt_f64(running), bound])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(())
}

/// Round-trip float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
