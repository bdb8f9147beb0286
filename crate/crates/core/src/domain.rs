//! Curvature classes, step schedules and oracle samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ratio `mu / L`, or the limit where the lower curvature is unbounded.
///
/// Formulas take their analytic `kappa -> -inf` limit on `NegInfinity`
/// instead of pushing a huge float through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kappa {
    Finite(f64),
    NegInfinity,
}

impl Kappa {
    /// Rejects positive and NaN values. `-inf` maps to [`Kappa::NegInfinity`].
    pub fn new(k: f64) -> Result<Self> {
        if k == f64::NEG_INFINITY {
            Ok(Kappa::NegInfinity)
        } else if k.is_nan() || k > 0.0 {
            Err(Error::PositiveKappa(k))
        } else {
            Ok(Kappa::Finite(k))
        }
    }

    /// Finite value, if any.
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Finite(k) => Some(k),
            Kappa::NegInfinity => None,
        }
    }

    /// Same as [`Kappa::new`] applied to an existing value: catches
    /// hand-built `Finite` variants with a positive payload.
    pub(crate) fn checked(self) -> Result<Self> {
        match self {
            Kappa::Finite(k) => Kappa::new(k),
            Kappa::NegInfinity => Ok(self),
        }
    }

    /// `-kappa / (1 - kappa)`, which tends to 1 in the unbounded limit.
    pub(crate) fn weight(self) -> f64 {
        match self {
            Kappa::Finite(k) => -k / (1.0 - k),
            Kappa::NegInfinity => 1.0,
        }
    }
}

impl std::fmt::Display for Kappa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kappa::Finite(k) => write!(f, "{k}"),
            Kappa::NegInfinity => f.write_str("-inf"),
        }
    }
}

/// Functions whose curvature lies in `[mu, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureClass {
    l: f64,
    /// `None` when the lower curvature is unbounded.
    mu: Option<f64>,
    kappa: Kappa,
}

/// Builds a class for the rate analysis: `L > 0` and `mu <= 0`.
/// `mu = -inf` selects the unbounded-below class.
pub fn validate_class(mu: f64, l: f64) -> Result<CurvatureClass> {
    let class = CurvatureClass::general(mu, l)?;
    if mu > 0.0 {
        return Err(Error::PositiveMu(mu));
    }
    Ok(class)
}

impl CurvatureClass {
    /// Any class with `L > 0` and `mu <= L`, including `mu > 0`. Interpolation
    /// checks accept these; the rate engine does not.
    pub fn general(mu: f64, l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::NonPositiveL(l));
        }
        if mu.is_nan() || mu == f64::INFINITY {
            return Err(Error::NonFiniteMu(mu));
        }
        if mu > l {
            return Err(Error::MuAboveL { mu, l });
        }
        if mu == f64::NEG_INFINITY {
            return Ok(Self::unbounded_below(l).expect("l checked"));
        }
        Ok(Self {
            l,
            mu: Some(mu),
            kappa: Kappa::Finite(mu / l),
        })
    }

    pub fn unbounded_below(l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::NonPositiveL(l));
        }
        Ok(Self {
            l,
            mu: None,
            kappa: Kappa::NegInfinity,
        })
    }

    pub fn from_kappa(kappa: Kappa, l: f64) -> Result<Self> {
        match kappa.checked()? {
            Kappa::Finite(k) => validate_class(k * l, l),
            Kappa::NegInfinity => Self::unbounded_below(l),
        }
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn kappa(&self) -> Kappa {
        self.kappa
    }

    pub fn is_unbounded_below(&self) -> bool {
        self.mu.is_none()
    }

    pub(crate) fn finite_mu(&self) -> Result<f64> {
        self.mu.ok_or(Error::UnboundedNotSupported)
    }
}

/// Normalized steps `h_0 .. h_{N-1}`; the method moves by `h_i / L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StepSchedule {
    steps: Vec<f64>,
}

impl StepSchedule {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptySchedule);
        }
        if let Some((index, &h)) = steps
            .iter()
            .enumerate()
            .find(|(_, h)| !(**h > 0.0 && **h < 2.0))
        {
            return Err(Error::StepOutOfSchedule { index, h });
        }
        Ok(Self { steps })
    }

    pub fn constant(h: f64, n: usize) -> Result<Self> {
        Self::new(vec![h; n])
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn n(&self) -> usize {
        self.steps.len()
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for StepSchedule {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StepSchedule> for Vec<f64> {
    fn from(s: StepSchedule) -> Self {
        s.steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTriplet {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub f: f64,
}

impl OracleTriplet {
    pub fn new(x: Vec<f64>, g: Vec<f64>, f: f64) -> Self {
        Self { x, g, f }
    }
}

/// A finite sample `{(x_i, g_i, f_i)}` sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripletSet {
    dim: usize,
    triplets: Vec<OracleTriplet>,
}

#[derive(Deserialize)]
struct RawTripletSet {
    dim: usize,
    triplets: Vec<OracleTriplet>,
}

impl<'de> Deserialize<'de> for TripletSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawTripletSet::deserialize(d)?;
        TripletSet::new(raw.dim, raw.triplets).map_err(serde::de::Error::custom)
    }
}

impl TripletSet {
    pub fn new(dim: usize, triplets: Vec<OracleTriplet>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        for (index, t) in triplets.iter().enumerate() {
            for got in [t.x.len(), t.g.len()] {
                if got != dim {
                    return Err(Error::DimensionMismatch {
                        index,
                        expected: dim,
                        got,
                    });
                }
            }
            if !t.f.is_finite() || t.x.iter().chain(&t.g).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTriplet(index));
            }
        }
        Ok(Self { dim, triplets })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn triplets(&self) -> &[OracleTriplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("triplet sets always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidData(e.to_string()))
    }
}

/// Which quantity the initial condition bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorKind {
    /// `f(x_0) - f(x_N) <= delta`
    GapToLast,
    /// `f(x_0) - f_* <= delta`
    GapToOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// All steps at most 1.
    Short,
    /// Some step in `(1, h_bar]`.
    Mid,
    /// Constant step above the threshold; conjectured.
    Large,
    /// Convex class with constant step in `(1.5, 2)`; conjectured.
    ConvexLarge,
}

impl Regime {
    pub fn is_conjectured(self) -> bool {
        matches!(self, Regime::Large | Regime::ConvexLarge)
    }
}

/// Upper bound on `min_i ||g_i||^2`, written as `2 L delta / denominator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub bound: f64,
    pub denominator: f64,
    pub numerator_kind: NumeratorKind,
    pub regime: Regime,
    /// Per-step constants; empty for the conjectured bounds.
    pub p: Vec<f64>,
}

impl RateResult {
    pub fn is_conjectured(&self) -> bool {
        self.regime.is_conjectured()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
