use hypopep_core::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or input data. Exit code 2.
    Validation(String),
    /// The SDP solver or another numerical routine failed. Exit code 3.
    Solver(String),
    /// A verification did not hold. Exit code 4.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Solver(m) | CliError::Check(m) => m,
        }
    }

    pub fn flag(flag: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("invalid {flag}: {msg}"))
    }
}

/// The flag a validation error most likely comes from.
fn flag_of(e: &Error) -> Option<&'static str> {
    Some(match e {
        Error::NonPositiveL(_) => "--L",
        Error::MuAboveL { .. }
        | Error::PositiveMu(_)
        | Error::NonFiniteMu(_)
        | Error::PositiveKappa(_)
        | Error::KappaNotNegative(_)
        | Error::DegenerateClass
        | Error::UnboundedNotSupported => "--kappa",
        Error::StepOutOfSchedule { .. }
        | Error::EmptySchedule
        | Error::StepNonPositive(_)
        | Error::StepAboveThreshold { .. }
        | Error::StepOutOfRange { .. }
        | Error::StepAboveOne { .. } => "--steps",
        Error::InvalidDelta(_) => "--delta",
        Error::ZeroIterations => "--N",
        Error::BadEnvelopeParams { .. } => "--lambda/--sigma",
        _ => return None,
    })
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Sdp(_)
            | Error::SolverStall(_)
            | Error::IndefiniteGram(_)
            | Error::InterpolationFailure(_)
            | Error::RootNotBracketed { .. } => CliError::Solver(e.to_string()),
            _ => match flag_of(&e) {
                Some(flag) => CliError::flag(flag, e),
                None => CliError::Validation(e.to_string()),
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Text for standard output, plus a failure that sets the exit code after
/// the text is printed.
#[derive(Debug)]
pub struct Outcome {
    pub text: String,
    pub failure: Option<CliError>,
}

impl Outcome {
    pub fn ok(text: String) -> Self {
        Self { text, failure: None }
    }

    pub fn failing_if(text: String, failed: bool, failure: impl FnOnce() -> CliError) -> Self {
        Self {
            text,
            failure: failed.then(failure),
        }
    }
}
