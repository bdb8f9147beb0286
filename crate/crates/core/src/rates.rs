//! Closed-form worst-case rates of the gradient method on hypoconvex classes.

use serde::{Deserialize, Serialize};

use crate::domain::{CurvatureClass, Kappa, NumeratorKind, RateResult, Regime, StepSchedule};
use crate::error::{Error, Result};

/// Relative slack when comparing a step against the threshold, so that a
/// step typed in as `sqrt(3)` is accepted at `kappa = -1`.
const THRESHOLD_SLACK: f64 = 1e-12;

/// Largest step covered by the proven rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// True in the unbounded-below limit, where `value = 2` is not attained.
    pub open: bool,
}

pub fn step_threshold(kappa: Kappa) -> Result<Threshold> {
    match kappa.checked()? {
        Kappa::NegInfinity => Ok(Threshold {
            value: 2.0,
            open: true,
        }),
        Kappa::Finite(k) => {
            let root = (1.0 - k + k * k).sqrt();
            // 1 + k + root cancels for very negative k; use the conjugate form.
            let value = if k < -1.0 {
                (root - 1.0 - k) / (-k)
            } else {
                3.0 / (1.0 + k + root)
            };
            Ok(Threshold { value, open: false })
        }
    }
}

fn admissible(h: f64, t: Threshold) -> bool {
    if t.open {
        h < t.value
    } else {
        h <= t.value * (1.0 + THRESHOLD_SLACK)
    }
}

/// Per-step constant `p(h, kappa)`; the step guarantees a decrease of
/// `p / (2L)` times the smaller squared gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStepConstant {
    pub p: f64,
    pub h: f64,
    pub kappa: Kappa,
}

impl OneStepConstant {
    /// `P(h) = p / (2L)`.
    pub fn scaled(&self, l: f64) -> f64 {
        self.p / (2.0 * l)
    }
}

pub fn one_step_p(h: f64, kappa: Kappa) -> Result<OneStepConstant> {
    let kappa = kappa.checked()?;
    if !(h > 0.0) {
        return Err(Error::StepNonPositive(h));
    }
    let t = step_threshold(kappa)?;
    if !admissible(h, t) {
        return Err(Error::StepAboveThreshold {
            index: 0,
            h,
            threshold: t.value,
        });
    }
    Ok(OneStepConstant {
        p: p_unchecked(h, kappa),
        h,
        kappa,
    })
}

pub(crate) fn p_unchecked(h: f64, kappa: Kappa) -> f64 {
    match kappa {
        Kappa::NegInfinity => 2.0 * h - h * h,
        Kappa::Finite(_) if h <= 1.0 => 2.0 * h - h * h * kappa.weight(),
        Kappa::Finite(k) => h * (2.0 - h) * (2.0 - k * h) / (2.0 - (1.0 + k) * h),
    }
}

fn classify(sched: &StepSchedule) -> Regime {
    if sched.steps().iter().all(|&h| h <= 1.0) {
        Regime::Short
    } else {
        Regime::Mid
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta))
    }
}

/// `2 L delta / sum p` (gap to last iterate) or `2 L delta / (1 + sum p)`
/// (gap to the optimal value).
pub fn nstep_bound(
    cls: &CurvatureClass,
    sched: &StepSchedule,
    delta: f64,
    kind: NumeratorKind,
) -> Result<RateResult> {
    check_delta(delta)?;
    let kappa = cls.kappa();
    let t = step_threshold(kappa)?;
    let mut p = Vec::with_capacity(sched.n());
    for (index, &h) in sched.steps().iter().enumerate() {
        if !admissible(h, t) {
            return Err(Error::StepAboveThreshold {
                index,
                h,
                threshold: t.value,
            });
        }
        p.push(p_unchecked(h, kappa));
    }
    let sum: f64 = p.iter().sum();
    let denominator = match kind {
        NumeratorKind::GapToLast => sum,
        NumeratorKind::GapToOptimal => 1.0 + sum,
    };
    Ok(RateResult {
        bound: 2.0 * cls.l() * delta / denominator,
        denominator,
        numerator_kind: kind,
        regime: classify(sched),
        p,
    })
}

/// Chains one-step decreases `p_i` with an optional final `q`:
/// `gap / (q + sum p_i)`.
pub fn meta_combine(p_list: &[f64], q: Option<f64>, gap: f64) -> Result<f64> {
    let terms: Vec<f64> = p_list.iter().copied().chain(q).collect();
    if terms.iter().any(|t| !t.is_finite()) || !gap.is_finite() {
        return Err(Error::InvalidData("non-finite term".into()));
    }
    let pos = terms.iter().any(|&t| t > 0.0);
    let neg = terms.iter().any(|&t| t < 0.0);
    if pos && neg {
        return Err(Error::MixedSigns);
    }
    let sum: f64 = terms.iter().sum();
    if sum == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(gap / sum)
}

/// `(-9 - 5 sqrt5 + sqrt(190 + 90 sqrt5)) / 4`: below it the best constant
/// step is the interior cubic root, above it the threshold.
pub fn kappa_bar() -> f64 {
    let s5 = 5f64.sqrt();
    (-9.0 - 5.0 * s5 + (190.0 + 90.0 * s5).sqrt()) / 4.0
}

/// The cubic `-k(1+k)h^3 + (3k + (1+k)^2)h^2 - 4(1+k)h + 4` and its derivative.
pub fn optimal_step_cubic(h: f64, k: f64) -> (f64, f64) {
    let a = -k * (1.0 + k);
    let b = 3.0 * k + (1.0 + k) * (1.0 + k);
    let c = -4.0 * (1.0 + k);
    (((a * h + b) * h + c) * h + 4.0, (3.0 * a * h + 2.0 * b) * h + c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalStepMode {
    /// Maximizes the proven one-step constant over `(0, h_bar]`.
    Theorem,
    /// Root of the same cubic on `[1, 2)`; conjectured optimal in the long run.
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepBranch {
    CubicRoot,
    Threshold,
    AsymptoticConjectured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalStep {
    pub h_star: f64,
    pub branch: StepBranch,
}

pub fn optimal_step(kappa: Kappa, mode: OptimalStepMode) -> Result<OptimalStep> {
    let kappa = kappa.checked()?;
    match (mode, kappa) {
        // The cubic divided by k^2 tends to h^2 (1 - h).
        (OptimalStepMode::Theorem, Kappa::NegInfinity) => Ok(OptimalStep {
            h_star: 1.0,
            branch: StepBranch::CubicRoot,
        }),
        (OptimalStepMode::Asymptotic, Kappa::NegInfinity) => Ok(OptimalStep {
            h_star: 1.0,
            branch: StepBranch::AsymptoticConjectured,
        }),
        (OptimalStepMode::Theorem, Kappa::Finite(k)) => {
            let hbar = step_threshold(kappa)?.value;
            if k > kappa_bar() {
                return Ok(OptimalStep {
                    h_star: hbar,
                    branch: StepBranch::Threshold,
                });
            }
            Ok(OptimalStep {
                h_star: cubic_root(k, 1.0, hbar)?,
                branch: StepBranch::CubicRoot,
            })
        }
        (OptimalStepMode::Asymptotic, Kappa::Finite(k)) => {
            if k >= 0.0 {
                return Err(Error::KappaNotNegative(k));
            }
            Ok(OptimalStep {
                h_star: cubic_root(k, 1.0, 2.0)?,
                branch: StepBranch::AsymptoticConjectured,
            })
        }
    }
}

/// Bisection with Newton steps when they stay inside the bracket.
/// The cubic is positive at `lo` and nonpositive at `hi`.
fn cubic_root(k: f64, lo: f64, hi: f64) -> Result<f64> {
    let f = |h| optimal_step_cubic(h, k);
    let scale = 4.0 + k.abs() * (1.0 + k.abs()) * 8.0;
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    // At kappa_bar the root sits on the threshold; rounding may leave a
    // tiny positive value there.
    if fhi.abs() <= 1e-13 * scale {
        return Ok(hi);
    }
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::RootNotBracketed { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() || b - a <= 4.0 * f64::EPSILON {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::ZeroIterations)
    } else {
        Ok(())
    }
}

/// `(1 - h)^(-2N)` evaluated as `((h - 1)^2)^(-N)`.
fn geometric(h: f64, n: usize) -> f64 {
    ((h - 1.0) * (h - 1.0)).powi(-(n as i32))
}

/// Conjectured tight bound for convex functions and constant `h` in `(1.5, 2)`.
pub fn conjectured_bound_convex(
    h: f64,
    n: usize,
    l: f64,
    delta: f64,
    kind: NumeratorKind,
) -> Result<RateResult> {
    if !(h > 1.5 && h < 2.0) {
        return Err(Error::StepOutOfRange { h, lo: 1.5, hi: 2.0 });
    }
    check_n(n)?;
    check_delta(delta)?;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::NonPositiveL(l));
    }
    let linear = 2.0 * n as f64 * h;
    let denominator = match kind {
        NumeratorKind::GapToOptimal => geometric(h, n).min(1.0 + linear),
        NumeratorKind::GapToLast => (geometric(h, n) - 1.0).min(linear),
    };
    Ok(RateResult {
        bound: 2.0 * l * delta / denominator,
        denominator,
        numerator_kind: kind,
        regime: Regime::ConvexLarge,
        p: Vec::new(),
    })
}

/// Per-step growth of the linear branch above the threshold, the large-step
/// formula of `p` evaluated past `h_bar`.
pub fn third_regime_slope(h: f64, k: f64) -> f64 {
    h * (2.0 - h) * (2.0 - k * h) / (2.0 - h * (1.0 + k))
}

/// Conjectured bound for constant `h` in `(h_bar, 2)` given the intercept `r`.
pub fn conjectured_bound_third_regime(
    h: f64,
    n: usize,
    cls: &CurvatureClass,
    delta: f64,
    r_value: f64,
    kind: NumeratorKind,
) -> Result<RateResult> {
    let t = step_threshold(cls.kappa())?;
    let Kappa::Finite(k) = cls.kappa() else {
        return Err(Error::StepOutOfRange { h, lo: t.value, hi: 2.0 });
    };
    if !(h > t.value && h < 2.0) {
        return Err(Error::StepOutOfRange { h, lo: t.value, hi: 2.0 });
    }
    check_n(n)?;
    check_delta(delta)?;
    let linear = r_value + n as f64 * third_regime_slope(h, k);
    let denominator = match kind {
        NumeratorKind::GapToOptimal => geometric(h, n).min(linear),
        NumeratorKind::GapToLast => (geometric(h, n) - 1.0).min(linear - 1.0),
    };
    Ok(RateResult {
        bound: 2.0 * cls.l() * delta / denominator,
        denominator,
        numerator_kind: kind,
        regime: Regime::Large,
        p: Vec::new(),
    })
}

/// One observation for [`fit_r`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub n: usize,
    pub value: f64,
    /// `r + N slope` implied by the value (shifted by one for the gap to last).
    pub linear_denominator: f64,
    pub geometric: f64,
    pub on_linear_branch: bool,
    /// Observed minus fitted, in denominator units. Zero for excluded points.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitR {
    pub r: f64,
    pub slope: f64,
    /// Least-squares slope with a free intercept, as a branch diagnostic.
    pub free_slope: f64,
    pub max_residual: f64,
    pub rms_residual: f64,
    pub points: Vec<FitPoint>,
    pub kind: NumeratorKind,
}

impl FitR {
    /// Conjectured worst-case value at `n` steps.
    pub fn predict(&self, cls: &CurvatureClass, h: f64, delta: f64, n: usize) -> Result<f64> {
        conjectured_bound_third_regime(h, n, cls, delta, self.r, self.kind).map(|r| r.bound)
    }
}

/// Estimates the intercept `r` of the linear branch from solved PEP values.
///
/// Each value is turned into `D(N) = 2 L delta / value` (plus one for the gap
/// to the last iterate). Points where `D` reaches the geometric branch are
/// dropped, the intercept is refit with the slope held at its analytic value,
/// and points predicted to sit on the geometric branch are dropped in turn
/// until the set is stable.
pub fn fit_r(
    cls: &CurvatureClass,
    h: f64,
    delta: f64,
    kind: NumeratorKind,
    pep_values: &[(usize, f64)],
) -> Result<FitR> {
    check_delta(delta)?;
    let k = cls.kappa().value().ok_or(Error::UnboundedNotSupported)?;
    let slope = third_regime_slope(h, k);
    let shift = match kind {
        NumeratorKind::GapToOptimal => 0.0,
        NumeratorKind::GapToLast => 1.0,
    };
    let mut points: Vec<FitPoint> = Vec::with_capacity(pep_values.len());
    for &(n, value) in pep_values {
        if !(value > 0.0 && value.is_finite()) || n == 0 {
            return Err(Error::InvalidData(format!("bad observation ({n}, {value})")));
        }
        let d = 2.0 * cls.l() * delta / value + shift;
        let geo = geometric(h, n);
        points.push(FitPoint {
            n,
            value,
            linear_denominator: d,
            geometric: geo,
            on_linear_branch: d < geo * (1.0 - 1e-6),
            residual: 0.0,
        });
    }

    let intercept = |pts: &[FitPoint]| -> Option<f64> {
        let used: Vec<f64> = pts
            .iter()
            .filter(|p| p.on_linear_branch)
            .map(|p| p.linear_denominator - p.n as f64 * slope)
            .collect();
        (!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64)
    };

    let mut r = intercept(&points).ok_or(Error::InsufficientData(0))?;
    for _ in 0..points.len() + 1 {
        let mut changed = false;
        for p in points.iter_mut().filter(|p| p.on_linear_branch) {
            if p.geometric < r + p.n as f64 * slope {
                p.on_linear_branch = false;
                changed = true;
            }
        }
        match intercept(&points) {
            Some(next) => r = next,
            None => return Err(Error::InsufficientData(0)),
        }
        if !changed {
            break;
        }
    }

    let used: Vec<&FitPoint> = points.iter().filter(|p| p.on_linear_branch).collect();
    let m = used.len();
    if m < 2 {
        return Err(Error::InsufficientData(m));
    }
    let mean_n = used.iter().map(|p| p.n as f64).sum::<f64>() / m as f64;
    let mean_d = used.iter().map(|p| p.linear_denominator).sum::<f64>() / m as f64;
    let sxx: f64 = used.iter().map(|p| (p.n as f64 - mean_n).powi(2)).sum();
    let sxy: f64 = used
        .iter()
        .map(|p| (p.n as f64 - mean_n) * (p.linear_denominator - mean_d))
        .sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(1));
    }
    let free_slope = sxy / sxx;
    if (free_slope - slope).abs() > 0.01 * slope.abs() {
        return Err(Error::BranchMismatch {
            fitted: free_slope,
            analytic: slope,
        });
    }

    for p in points.iter_mut() {
        p.residual = if p.on_linear_branch {
            p.linear_denominator - (r + p.n as f64 * slope)
        } else {
            0.0
        };
    }
    let res: Vec<f64> = points
        .iter()
        .filter(|p| p.on_linear_branch)
        .map(|p| p.residual)
        .collect();
    Ok(FitR {
        r,
        slope,
        free_slope,
        max_residual: res.iter().fold(0.0, |a, b| a.max(b.abs())),
        rms_residual: (res.iter().map(|x| x * x).sum::<f64>() / m as f64).sqrt(),
        points,
        kind,
    })
}
