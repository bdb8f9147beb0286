//! Infeasible-start primal-dual path-following method.
//!
//! Internally the problem is put in the form
//!
//! ```text
//! minimize   <C, X> + e'u
//! subject to A(X) + B u - s = -c,   X psd,  s >= 0,  u free
//! ```
//!
//! whose dual is `maximize -c'y  s.t.  Z = C - A*(y) psd,  y >= 0,  B'y = e`.
//! The multiplier `y` doubles as the dual slack of `s`. Search directions use
//! Nesterov-Todd scaling on the semidefinite block, and the free variables are
//! eliminated from the Newton system through a small Schur complement.
//! Each iteration is a Mehrotra predictor-corrector step.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::problem::{KktResiduals, Sense, SdpProblem, SdpSolution, SolveStatus};
use crate::SdpError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target for the relative primal, dual and gap residuals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// Fraction of the distance to the cone boundary taken at each step:
/// `BASE + GAIN * min(predictor steps)`.
const STEP_FRACTION_BASE: f64 = 0.9;
const STEP_FRACTION_GAIN: f64 = 0.09;
const BACKTRACKS: usize = 8;
/// Magnitude at which iterates are considered diverging.
const DIVERGENCE: f64 = 1e12;
const REFINEMENT_STEPS: usize = 3;

struct Standard {
    /// Kept Gram indices, in the original numbering.
    kept: Vec<usize>,
    /// Kept free variables, as indices into `SdpProblem::vars`.
    kept_vars: Vec<usize>,
    a: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    cost: DMatrix<f64>,
    e: DVector<f64>,
    sign: f64,
    /// No Gram index is used; a 1x1 placeholder block with unit cost stands in.
    dummy: bool,
}

impl Standard {
    fn from_problem(p: &SdpProblem) -> Result<Self, StandardError> {
        let n = p.gram_dim;
        let sign = match p.objective.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };

        // Gram indices touched by no constraint and not by the objective carry
        // no information; keeping them would make Z singular for every y.
        let touches = |a: &[f64], i: usize| (0..n).any(|j| a[i * n + j] != 0.0);
        let mut kept: Vec<usize> = (0..n)
            .filter(|&i| {
                p.constraints.iter().any(|c| touches(&c.a, i))
                    || p.objective.gram.as_deref().is_some_and(|g| touches(g, i))
            })
            .collect();
        let dummy = kept.is_empty();
        if dummy {
            kept.push(0);
        }
        let nk = kept.len();

        let reduce = |a: &[f64]| DMatrix::from_fn(nk, nk, |i, j| a[kept[i] * n + kept[j]]);

        let var_index: BTreeMap<&str, usize> = p
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let mut used = vec![false; p.vars.len()];
        for c in &p.constraints {
            for (name, coef) in &c.lin {
                if *coef != 0.0 {
                    used[var_index[name.as_str()]] = true;
                }
            }
        }
        for (name, coef) in &p.objective.lin {
            if *coef != 0.0 && !used[var_index[name.as_str()]] {
                return Err(StandardError::UnboundedVariable);
            }
        }
        let kept_vars: Vec<usize> = (0..p.vars.len()).filter(|&i| used[i]).collect();
        let q = kept_vars.len();
        let position: BTreeMap<usize, usize> =
            kept_vars.iter().enumerate().map(|(k, &v)| (v, k)).collect();

        let m = p.constraints.len();
        let a: Vec<DMatrix<f64>> = if dummy {
            vec![DMatrix::zeros(1, 1); m]
        } else {
            p.constraints.iter().map(|c| reduce(&c.a)).collect()
        };
        let mut b = DMatrix::zeros(m, q);
        for (k, c) in p.constraints.iter().enumerate() {
            for (name, coef) in &c.lin {
                if let Some(&col) = position.get(&var_index[name.as_str()]) {
                    b[(k, col)] += coef;
                }
            }
        }
        let c = DVector::from_iterator(m, p.constraints.iter().map(|c| c.constant));
        let cost = if dummy {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            match &p.objective.gram {
                Some(g) => reduce(g) * sign,
                None => DMatrix::zeros(nk, nk),
            }
        };
        let mut e = DVector::zeros(q);
        for (name, coef) in &p.objective.lin {
            if let Some(&col) = position.get(&var_index[name.as_str()]) {
                e[col] = sign * coef;
            }
        }
        Ok(Self {
            kept,
            kept_vars,
            a,
            b,
            c,
            cost,
            e,
            sign,
            dummy,
        })
    }

    fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|a| a.dot(x)))
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.cost.nrows();
        let mut out = DMatrix::zeros(n, n);
        for (a, yk) in self.a.iter().zip(y.iter()) {
            if *yk != 0.0 {
                out += a * *yk;
            }
        }
        out
    }
}

enum StandardError {
    UnboundedVariable,
}

#[derive(Clone)]
struct Iterate {
    x: DMatrix<f64>,
    s: DVector<f64>,
    u: DVector<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
}

struct Residuals {
    rp: DVector<f64>,
    rd: DMatrix<f64>,
    ru: DVector<f64>,
    pobj: f64,
    dobj: f64,
    rel: KktResiduals,
}

struct Direction {
    dx: DMatrix<f64>,
    ds: DVector<f64>,
    du: DVector<f64>,
    dz: DMatrix<f64>,
    dy: DVector<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest `alpha` keeping `x + alpha * dx` positive definite.
fn max_step_psd(chol: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let mut scaled = &linv * dx * linv.transpose();
    symmetrize(&mut scaled);
    let min_eig = SymmetricEigen::new(scaled)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min_eig
    }
}

fn max_step_orthant(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

/// Nesterov-Todd scaling `W = G G'` with `W Z W = X`. In the scaled
/// coordinates `G^-1 X G^-T = G' Z G = diag(sv)`.
struct Scaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    sv: DVector<f64>,
    w: DMatrix<f64>,
}

fn nt_scaling(lx: &DMatrix<f64>, lz: &DMatrix<f64>) -> Option<Scaling> {
    let svd = (lz.transpose() * lx).try_svd(true, true, f64::EPSILON, 200)?;
    let v_t = svd.v_t?;
    let sv = svd.singular_values;
    if sv.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let lx_inv = lx.clone().try_inverse()?;
    let mut g = lx * v_t.transpose();
    let mut g_inv = &v_t * lx_inv;
    for (k, &x) in sv.iter().enumerate() {
        let r = x.sqrt();
        g.column_mut(k).unscale_mut(r);
        g_inv.row_mut(k).scale_mut(r);
    }
    let mut w = &g * g.transpose();
    symmetrize(&mut w);
    Some(Scaling { g, g_inv, sv, w })
}

fn residuals(std: &Standard, it: &Iterate) -> Residuals {
    let ax = std.apply(&it.x);
    let rp = -&std.c - ax - &std.b * &it.u + &it.s;
    let rd = &std.cost - std.adjoint(&it.y) - &it.z;
    let ru = &std.e - std.b.transpose() * &it.y;
    let pobj = std.cost.dot(&it.x) + std.e.dot(&it.u);
    let dobj = -std.c.dot(&it.y);
    let rel = KktResiduals {
        primal: rp.amax() / (1.0 + std.c.amax()),
        dual: (rd.amax() + ru.amax()) / (1.0 + std.cost.amax() + std.e.amax()),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    };
    Residuals {
        rp,
        rd,
        ru,
        pobj,
        dobj,
        rel,
    }
}

struct NewtonSystem {
    scaling: Scaling,
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    h_chol: Factor,
    hinv_b: DMatrix<f64>,
    schur_chol: Option<Factor>,
}

impl NewtonSystem {
    fn build(std: &Standard, it: &Iterate, scaling: Scaling) -> Option<Self> {
        let m = std.a.len();
        let w = scaling.w.clone();
        let waw: Vec<DMatrix<f64>> = std.a.iter().map(|a| &w * a * &w).collect();
        let mut h = DMatrix::zeros(m, m);
        for k in 0..m {
            for l in 0..=k {
                let v = std.a[k].dot(&waw[l]);
                h[(k, l)] = v;
                h[(l, k)] = v;
            }
            h[(k, k)] += it.s[k] / it.y[k];
        }
        let h_chol = Factor::new(&h)?;
        let hinv_b = h_chol.solve(&std.b);
        let schur_chol = if std.b.ncols() > 0 {
            let mut schur = std.b.transpose() * &hinv_b;
            symmetrize(&mut schur);
            Some(Factor::new(&schur)?)
        } else {
            None
        };
        Some(Self {
            scaling,
            w,
            h,
            h_chol,
            hinv_b,
            schur_chol,
        })
    }

    /// Solves `H dy + B du = r1`, `B' dy = r2`.
    fn reduced_solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let hinv_r1 = self.h_chol.solve_vec(r1);
        match &self.schur_chol {
            Some(schur) => {
                let du = schur.solve_vec(&(self.hinv_b.transpose() * r1 - r2));
                (hinv_r1 - &self.hinv_b * &du, du)
            }
            None => (hinv_r1, DVector::zeros(0)),
        }
    }

    /// Search direction aiming at complementarity `target`. With `corr`, the
    /// second-order term of that (predictor) direction is subtracted.
    fn solve(&self, std: &Standard, it: &Iterate, res: &Residuals, target: f64, corr: Option<&Direction>) -> Direction {
        let sc = &self.scaling;
        let n = sc.sv.len();
        // Right-hand side of the symmetrized complementarity row, solved in
        // the scaled space where the Lyapunov operator is diagonal.
        let mut m = DMatrix::from_diagonal(&sc.sv.map(|v| target / v - v));
        if let Some(d) = corr {
            let dx = &sc.g_inv * &d.dx * sc.g_inv.transpose();
            let dz = sc.g.transpose() * &d.dz * &sc.g;
            let prod = dx * dz;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] -= (prod[(i, j)] + prod[(j, i)]) / (sc.sv[i] + sc.sv[j]);
                }
            }
        }
        let mut rc = &sc.g * m * sc.g.transpose();
        symmetrize(&mut rc);
        let mut rs = it.y.map(|y| target / y) - &it.s;
        if let Some(d) = corr {
            rs -= d.ds.component_mul(&d.dy).component_div(&it.y);
        }
        let t = rc - &self.w * &res.rd * &self.w;
        let rhs = &res.rp - std.apply(&t) + &rs;
        let (mut dy, mut du) = self.refined_solve(std, &rhs, &res.ru);
        let aty = std.adjoint(&dy);
        let mut dz = &res.rd - &aty;
        let mut dx = t + &self.w * aty * &self.w;
        let mut ds = rs - it.s.component_div(&it.y).component_mul(&dy);

        // The dual, slack and complementarity rows hold by construction; the
        // primal row loses accuracy through cancellation once W is badly
        // scaled. Correct it with extra solves that leave the others intact.
        for _ in 0..REFINEMENT_STEPS {
            let err = &res.rp - std.apply(&dx) - &std.b * &du + &ds;
            if err.amax() <= f64::EPSILON * (1.0 + res.rp.amax() + std.c.amax()) {
                break;
            }
            let zero = DVector::zeros(du.len());
            let (cy, cu) = self.refined_solve(std, &err, &zero);
            let atc = std.adjoint(&cy);
            dx += &self.w * &atc * &self.w;
            dz -= atc;
            ds -= it.s.component_div(&it.y).component_mul(&cy);
            dy += cy;
            du += cu;
        }
        symmetrize(&mut dz);
        symmetrize(&mut dx);
        Direction { dx, ds, du, dz, dy }
    }

    /// [`Self::reduced_solve`] followed by refinement against the exact
    /// (unregularized) matrix.
    fn refined_solve(&self, std: &Standard, rhs: &DVector<f64>, ru: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dy, mut du) = self.reduced_solve(rhs, ru);
        for _ in 0..REFINEMENT_STEPS {
            let r1 = rhs - &self.h * &dy - &std.b * &du;
            let r2 = ru - std.b.transpose() * &dy;
            if r1.amax().max(r2.amax()) <= f64::EPSILON * (1.0 + rhs.amax()) {
                break;
            }
            let (cy, cu) = self.reduced_solve(&r1, &r2);
            dy += cy;
            du += cu;
        }
        (dy, du)
    }
}

/// Cholesky factor of a symmetric positive semidefinite matrix after scaling
/// it to unit diagonal. Near the optimum the Schur complement mixes entries
/// of wildly different size and is close to singular; when the plain
/// factorization fails, a growing multiple of the identity is added to the
/// scaled matrix.
struct Factor {
    chol: Cholesky<f64, Dyn>,
    /// `1 / sqrt(diag)` of the original matrix.
    d: DVector<f64>,
}

impl Factor {
    fn new(m: &DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let d = m.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 });
        let mut scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j]);
        symmetrize(&mut scaled);
        if let Some(chol) = Cholesky::new(scaled.clone()) {
            return Some(Self { chol, d });
        }
        let mut delta = 1e-14;
        while delta <= 1e-6 {
            let shifted = &scaled + DMatrix::identity(n, n) * delta;
            if let Some(chol) = Cholesky::new(shifted) {
                return Some(Self { chol, d });
            }
            delta *= 10.0;
        }
        None
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = rhs.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= self.d[i];
        }
        let mut out = self.chol.solve(&scaled);
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.d[i];
        }
        out
    }

    fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs.component_mul(&self.d);
        self.chol.solve(&scaled).component_mul(&self.d)
    }
}

fn step_lengths(cx: &Cholesky<f64, Dyn>, cz: &Cholesky<f64, Dyn>, it: &Iterate, d: &Direction) -> (f64, f64) {
    let ap = max_step_psd(cx, &d.dx).min(max_step_orthant(&it.s, &d.ds));
    let ad = max_step_psd(cz, &d.dz).min(max_step_orthant(&it.y, &d.dy));
    (ap, ad)
}

/// Solves `problem` to the requested tolerance.
///
/// Numerical breakdown of the Newton system is not an error: the best iterate
/// found so far is returned with status [`SolveStatus::MaxIter`].
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    let std = match Standard::from_problem(problem) {
        Ok(s) => s,
        Err(StandardError::UnboundedVariable) => {
            return Ok(unbounded_solution(problem));
        }
    };
    let n = std.cost.nrows();
    let m = std.a.len();
    let q = std.b.ncols();

    let data_scale = std.c.amax().max(1.0);
    let cost_scale = std.cost.amax().max(std.e.amax()).max(1.0);
    let mut it = Iterate {
        x: DMatrix::identity(n, n) * data_scale,
        s: DVector::from_element(m, data_scale),
        u: DVector::zeros(q),
        z: DMatrix::identity(n, n) * cost_scale,
        y: DVector::from_element(m, cost_scale),
    };

    let mut best: Option<(f64, Iterate)> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stalled = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let res = residuals(&std, &it);
        let score = res.rel.max();
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, it.clone()));
        }
        if score <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if res.rel.primal <= opts.tol.sqrt() && res.pobj < -DIVERGENCE * cost_scale * data_scale {
            status = SolveStatus::Unbounded;
            break;
        }
        if res.rel.dual <= opts.tol.sqrt() && res.dobj > DIVERGENCE * cost_scale * data_scale {
            status = SolveStatus::Infeasible;
            break;
        }

        let mu = (it.x.dot(&it.z) + it.s.dot(&it.y)) / (n + m) as f64;
        let (Some(cx), Some(cz)) = (Cholesky::new(it.x.clone()), Cholesky::new(it.z.clone())) else {
            break;
        };
        let Some(w) = nt_scaling(&cx.l(), &cz.l()) else {
            break;
        };
        let Some(system) = NewtonSystem::build(&std, &it, w) else {
            break;
        };

        // Predictor.
        let aff = system.solve(&std, &it, &res, 0.0, None);
        let (ap, ad) = step_lengths(&cx, &cz, &it, &aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let fraction = STEP_FRACTION_BASE + STEP_FRACTION_GAIN * ap.min(ad);
        let x_aff = &it.x + &aff.dx * ap;
        let z_aff = &it.z + &aff.dz * ad;
        let s_aff = &it.s + &aff.ds * ap;
        let y_aff = &it.y + &aff.dy * ad;
        let mu_aff = (x_aff.dot(&z_aff) + s_aff.dot(&y_aff)) / (n + m) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let dir = system.solve(&std, &it, &res, sigma * mu, Some(&aff));
        let (ap, ad) = step_lengths(&cx, &cz, &it, &dir);
        let mut ap = (fraction * ap).min(1.0);
        let mut ad = (fraction * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            stalled += 1;
            if stalled > 3 {
                break;
            }
        } else {
            stalled = 0;
        }

        // Rounding can push an iterate hugging the boundary out of the cone;
        // shorten the step until both blocks factor.
        let mut next = it.clone();
        for _ in 0..BACKTRACKS {
            next.x = &it.x + &dir.dx * ap;
            next.s = &it.s + &dir.ds * ap;
            next.u = &it.u + &dir.du * ap;
            next.z = &it.z + &dir.dz * ad;
            next.y = &it.y + &dir.dy * ad;
            symmetrize(&mut next.x);
            symmetrize(&mut next.z);
            if Cholesky::new(next.x.clone()).is_some() && Cholesky::new(next.z.clone()).is_some() {
                break;
            }
            ap *= 0.5;
            ad *= 0.5;
        }
        it = next;
        if it.x.amax() > DIVERGENCE * data_scale * 1e3 || it.y.amax() > DIVERGENCE * cost_scale * 1e3 {
            break;
        }
        iterations = iter + 1;
    }

    let final_it = match (status, best) {
        (SolveStatus::Optimal, _) | (_, None) => it,
        (_, Some((_, b))) => b,
    };
    let res = residuals(&std, &final_it);
    if status == SolveStatus::MaxIter && res.rel.max() <= opts.tol {
        status = SolveStatus::Optimal;
    }
    Ok(assemble(problem, &std, &final_it, &res, status, iterations))
}

fn assemble(
    problem: &SdpProblem,
    std: &Standard,
    it: &Iterate,
    res: &Residuals,
    status: SolveStatus,
    iterations: usize,
) -> SdpSolution {
    let n = problem.gram_dim;
    let mut gram = vec![0.0; n * n];
    if !std.dummy {
        for (i, &gi) in std.kept.iter().enumerate() {
            for (j, &gj) in std.kept.iter().enumerate() {
                gram[gi * n + gj] = it.x[(i, j)];
            }
        }
    }
    let mut linear_values: BTreeMap<String, f64> =
        problem.vars.iter().map(|v| (v.clone(), 0.0)).collect();
    for (k, &v) in std.kept_vars.iter().enumerate() {
        linear_values.insert(problem.vars[v].clone(), it.u[k]);
    }
    SdpSolution {
        objective: std.sign * res.pobj,
        dual_objective: std.sign * res.dobj,
        gram,
        gram_dim: n,
        linear_values,
        duals: it.y.iter().copied().collect(),
        status,
        kkt_residuals: res.rel,
        iterations,
    }
}

fn unbounded_solution(problem: &SdpProblem) -> SdpSolution {
    let n = problem.gram_dim;
    SdpSolution {
        objective: match problem.objective.sense {
            Sense::Maximize => f64::INFINITY,
            Sense::Minimize => f64::NEG_INFINITY,
        },
        dual_objective: f64::NAN,
        gram: vec![0.0; n * n],
        gram_dim: n,
        linear_values: problem.vars.iter().map(|v| (v.clone(), 0.0)).collect(),
        duals: vec![0.0; problem.constraints.len()],
        status: SolveStatus::Unbounded,
        kkt_residuals: KktResiduals {
            primal: f64::NAN,
            dual: f64::NAN,
            gap: f64::NAN,
        },
        iterations: 0,
    }
}
