//! One-dimensional piecewise-quadratic functions on which the gradient method
//! with steps `h_i <= 1` attains the analytic rate exactly.
//!
//! All iterates share the gradient `U`. Between consecutive iterates the
//! function bends down with curvature `mu` and then up with curvature `L`,
//! and the outer pieces are `L`-quadratics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{CurvatureClass, Kappa, NumeratorKind, OracleTriplet, StepSchedule, TripletSet};
use crate::error::{Error, Result};
use crate::gmlab::{fmt_f64, run_gm_on, Objective};
use crate::interpolation::check_interpolable;
use crate::rates::{nstep_bound, p_unchecked};

/// `f(x) = f_anchor + g_anchor (x - anchor) + (curvature / 2) (x - anchor)^2`
/// on `[start, end]`; `None` ends are infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub curvature: f64,
    pub anchor: f64,
    pub f_anchor: f64,
    pub g_anchor: f64,
}

impl Piece {
    fn contains(&self, x: f64) -> bool {
        self.end.is_none_or(|e| x <= e)
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        let d = x - self.anchor;
        (
            self.f_anchor + self.g_anchor * d + 0.5 * self.curvature * d * d,
            self.g_anchor + self.curvature * d,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseFunction {
    /// Ordered left to right.
    pub pieces: Vec<Piece>,
    /// `x_0 > x_1 > ... > x_N`.
    pub iterates: Vec<f64>,
    pub values: Vec<f64>,
    /// Where the curvature switches from `mu` to `L`, one per step.
    pub inflections: Vec<f64>,
    pub u: f64,
    pub kind: NumeratorKind,
    pub cls: CurvatureClass,
    pub sched: StepSchedule,
    pub delta: f64,
}

impl WorstCaseFunction {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        self.pieces
            .iter()
            .find(|p| p.contains(x))
            .unwrap_or_else(|| self.pieces.last().expect("at least two caps"))
            .eval(x)
    }

    pub fn triplets(&self) -> Vec<OracleTriplet> {
        self.iterates
            .iter()
            .zip(&self.values)
            .map(|(&x, &f)| OracleTriplet::new(vec![x], vec![self.u], f))
            .collect()
    }

    /// Global minimizer `(x, f)` of the left cap, which is the global minimum.
    pub fn minimizer(&self) -> (f64, f64) {
        let cap = &self.pieces[0];
        let x = cap.anchor - cap.g_anchor / cap.curvature;
        (x, self.eval(x).0)
    }

    /// Writes `x, f, grad` at `count` evenly spaced points covering the
    /// iterates and the minimizer with some margin on both sides.
    pub fn write_samples_csv<W: Write>(&self, count: usize, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidData(e.to_string());
        let lo = self.minimizer().0.min(*self.iterates.last().expect("nonempty"));
        let hi = self.iterates[0];
        let margin = 0.25 * (hi - lo).max(self.u / self.cls.l());
        let (a, b) = (lo - margin, hi + margin);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "f", "grad"]).map_err(io)?;
        let count = count.max(2);
        for k in 0..count {
            let x = a + (b - a) * k as f64 / (count - 1) as f64;
            let (f, g) = self.eval(x);
            w.write_record([fmt_f64(x), fmt_f64(f), fmt_f64(g)]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidData(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

impl Objective for WorstCaseFunction {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x[0]).0
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![self.eval(x[0]).1]
    }
}

fn check_inputs(cls: &CurvatureClass, sched: &StepSchedule, delta: f64) -> Result<(f64, f64)> {
    let mu = cls.finite_mu()?;
    if mu > 0.0 {
        return Err(Error::PositiveMu(mu));
    }
    if let Some((index, &h)) = sched.steps().iter().enumerate().find(|(_, &h)| h > 1.0) {
        return Err(Error::StepAboveOne { index, h });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok((mu, cls.l()))
}

pub fn build_worst_case(
    cls: &CurvatureClass,
    sched: &StepSchedule,
    delta: f64,
    kind: NumeratorKind,
) -> Result<WorstCaseFunction> {
    let (mu, l) = check_inputs(cls, sched, delta)?;
    let kappa = Kappa::Finite(mu / l);
    let h = sched.steps();
    let n = sched.n();
    let p: Vec<f64> = h.iter().map(|&h| p_unchecked(h, kappa)).collect();
    let u = nstep_bound(cls, sched, delta, kind)?.bound.sqrt();

    let offset = match kind {
        NumeratorKind::GapToLast => 0.0,
        NumeratorKind::GapToOptimal => u / l,
    };
    let mut iterates = vec![offset; n + 1];
    for i in (0..n).rev() {
        iterates[i] = iterates[i + 1] + h[i] * u / l;
    }
    let mut values = vec![0.0; n + 1];
    values[n] = match kind {
        NumeratorKind::GapToLast => 0.0,
        NumeratorKind::GapToOptimal => u * u / (2.0 * l),
    };
    for i in (0..n).rev() {
        values[i] = values[i + 1] + p[i] * u * u / (2.0 * l);
    }
    let w = kappa.weight();
    let inflections: Vec<f64> = (0..n).map(|i| iterates[i] - w * h[i] * u / l).collect();

    let cap = |start, end, i: usize| Piece {
        start,
        end,
        curvature: l,
        anchor: iterates[i],
        f_anchor: values[i],
        g_anchor: u,
    };
    let mut pieces = vec![cap(None, Some(iterates[n]), n)];
    for i in (0..n).rev() {
        let bend = inflections[i];
        if bend > iterates[i + 1] {
            pieces.push(Piece {
                start: Some(iterates[i + 1]),
                end: Some(bend),
                curvature: mu,
                anchor: iterates[i + 1],
                f_anchor: values[i + 1],
                g_anchor: u,
            });
        }
        if iterates[i] > bend {
            pieces.push(cap(Some(bend), Some(iterates[i]), i));
        }
    }
    pieces.push(cap(Some(iterates[0]), None, 0));

    Ok(WorstCaseFunction {
        pieces,
        iterates,
        values,
        inflections,
        u,
        kind,
        cls: *cls,
        sched: sched.clone(),
        delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub pass: bool,
    pub residual: f64,
}

impl CheckResult {
    fn new(residual: f64, limit: f64) -> Self {
        Self {
            pass: residual <= limit,
            residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub bound: f64,
    pub min_grad_sq: f64,
    /// Largest `|x_i^{run} - x_i|`.
    pub iterates_match: CheckResult,
    /// `|min_i g_i^2 - bound|` relative to the bound.
    pub bound_attained: CheckResult,
    /// Negated worst interpolation slack over sampled points.
    pub interpolable: CheckResult,
    /// `|f_0 - f_N - delta|` or `|f_0 - f_* - delta|` relative to delta.
    pub gap_matches: CheckResult,
    pub pass: bool,
}

/// Builds the function, runs the method on it from `x_0`, and checks that the
/// analytic bound is reached.
pub fn verify_tightness(
    cls: &CurvatureClass,
    sched: &StepSchedule,
    delta: f64,
    kind: NumeratorKind,
    tol: f64,
) -> Result<TightnessReport> {
    let wcf = build_worst_case(cls, sched, delta, kind)?;
    let l = cls.l();
    let bound = wcf.u * wcf.u;
    let traj = run_gm_on(&wcf, l, &[wcf.iterates[0]], sched)?;

    let scale = wcf.iterates[0].abs().max(wcf.u / l);
    let drift = traj
        .iterates
        .iter()
        .zip(&wcf.iterates)
        .map(|(t, x)| (t.x[0] - x).abs())
        .fold(0.0, f64::max);
    let iterates_match = CheckResult::new(drift, tol * scale);

    let bound_attained = CheckResult::new((traj.min_grad_sq - bound).abs() / bound, tol);

    let ts = TripletSet::new(1, sample_points(&wcf))?;
    let report = check_interpolable(&ts, cls, tol * (1.0 + wcf.values[0].abs()))?;
    let interpolable = CheckResult {
        pass: report.feasible,
        residual: (-report.worst_violation).max(0.0),
    };

    let f0 = traj.iterates[0].f;
    let gap = match kind {
        NumeratorKind::GapToLast => f0 - traj.iterates.last().expect("nonempty").f,
        NumeratorKind::GapToOptimal => f0 - wcf.minimizer().1,
    };
    let gap_matches = CheckResult::new((gap - delta).abs() / delta, tol);

    let pass = iterates_match.pass && bound_attained.pass && interpolable.pass && gap_matches.pass;
    Ok(TightnessReport {
        bound,
        min_grad_sq: traj.min_grad_sq,
        iterates_match,
        bound_attained,
        interpolable,
        gap_matches,
        pass,
    })
}

/// Iterates, inflection points, piece midpoints, the minimizer and a point
/// on each outer cap.
fn sample_points(wcf: &WorstCaseFunction) -> Vec<OracleTriplet> {
    let reach = wcf.u / wcf.cls.l();
    let mut xs: Vec<f64> = wcf.iterates.iter().chain(&wcf.inflections).copied().collect();
    for p in &wcf.pieces {
        if let (Some(a), Some(b)) = (p.start, p.end) {
            xs.push(0.5 * (a + b));
        }
    }
    xs.push(wcf.minimizer().0);
    xs.push(wcf.iterates[0] + reach);
    xs.push(*wcf.iterates.last().expect("nonempty") - 2.0 * reach);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let (f, g) = wcf.eval(x);
            OracleTriplet::new(vec![x], vec![g], f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_class;

    #[test]
    fn single_step_value() {
        let cls = validate_class(-1.0, 1.0).unwrap();
        let sched = StepSchedule::constant(1.0, 1).unwrap();
        let w = build_worst_case(&cls, &sched, 1.0, NumeratorKind::GapToOptimal).unwrap();
        assert!((w.u - 0.8f64.sqrt()).abs() < 1e-15);
        assert_eq!(w.eval(0.0), (0.0, 0.0));
    }

    #[test]
    fn rejects_long_steps_and_unbounded_class() {
        let cls = validate_class(-1.0, 1.0).unwrap();
        let sched = StepSchedule::new(vec![0.5, 1.2]).unwrap();
        assert!(matches!(
            build_worst_case(&cls, &sched, 1.0, NumeratorKind::GapToLast),
            Err(Error::StepAboveOne { index: 1, .. })
        ));
        let cls = CurvatureClass::unbounded_below(1.0).unwrap();
        let sched = StepSchedule::constant(0.5, 2).unwrap();
        assert!(matches!(
            build_worst_case(&cls, &sched, 1.0, NumeratorKind::GapToLast),
            Err(Error::UnboundedNotSupported)
        ));
    }

    #[test]
    fn convex_middle_is_linear() {
        let cls = validate_class(0.0, 1.0).unwrap();
        let sched = StepSchedule::constant(0.8, 3).unwrap();
        let w = build_worst_case(&cls, &sched, 1.0, NumeratorKind::GapToOptimal).unwrap();
        assert_eq!(w.pieces.len(), 5);
        assert!(w.pieces[1..4].iter().all(|p| p.curvature == 0.0 && p.g_anchor == w.u));
    }
}
