use thiserror::Error;

/// Every failure mode of the library. Validation errors carry the offending
/// value so the CLI can name it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("L must be positive and finite, got {0}")]
    NonPositiveL(f64),
    #[error("mu = {mu} exceeds L = {l}")]
    MuAboveL { mu: f64, l: f64 },
    #[error("mu = {0} is positive; only hypoconvex and convex classes are supported")]
    PositiveMu(f64),
    #[error("mu must be a number or -inf, got {0}")]
    NonFiniteMu(f64),
    #[error("kappa = {0} is positive")]
    PositiveKappa(f64),
    #[error("kappa must be negative here, got {0}")]
    KappaNotNegative(f64),
    #[error("mu = L makes the class degenerate")]
    DegenerateClass,

    #[error("step {index} is {h}, outside (0, 2)")]
    StepOutOfSchedule { index: usize, h: f64 },
    #[error("a step schedule needs at least one step")]
    EmptySchedule,
    #[error("step size must be positive, got {0}")]
    StepNonPositive(f64),
    #[error("step {index} = {h} exceeds the threshold {threshold}")]
    StepAboveThreshold { index: usize, h: f64, threshold: f64 },
    #[error("step {h} is outside the admissible range ({lo}, {hi})")]
    StepOutOfRange { h: f64, lo: f64, hi: f64 },
    #[error("step {index} = {h} is above 1; the explicit construction needs h <= 1")]
    StepAboveOne { index: usize, h: f64 },
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("iteration count must be at least 1")]
    ZeroIterations,

    #[error("terms do not share one sign")]
    MixedSigns,
    #[error("denominator is zero")]
    ZeroDenominator,
    #[error("root is not bracketed on [{lo}, {hi}]")]
    RootNotBracketed { lo: f64, hi: f64 },

    #[error("need at least two points on the linear branch, have {0}")]
    InsufficientData(usize),
    #[error("fitted slope {fitted} deviates from the analytic slope {analytic} by more than 1%")]
    BranchMismatch { fitted: f64, analytic: f64 },

    #[error("triplet {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("triplet set is empty")]
    EmptyTripletSet,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite entry in triplet {0}")]
    NonFiniteTriplet(usize),
    #[error("triplets are not interpolable (worst slack {worst_violation:e})")]
    NotInterpolable { worst_violation: f64 },
    #[error("simplex subproblem did not converge (KKT residual {0:e})")]
    SolverStall(f64),

    #[error("Gram matrix has eigenvalue {0:e}")]
    IndefiniteGram(f64),
    #[error("extracted triplets fail interpolation (worst slack {0:e})")]
    InterpolationFailure(f64),
    #[error("SDP solver: {0}")]
    Sdp(String),

    #[error("unbounded-below curvature is not supported here")]
    UnboundedNotSupported,
    #[error("non-finite value at iteration {0}")]
    NonFiniteValue(usize),
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("envelope needs 0 < sigma < lambda, got sigma = {sigma}, lambda = {lambda}")]
    BadEnvelopeParams { lambda: f64, sigma: f64 },
    #[error("invalid problem data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
