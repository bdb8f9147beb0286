//! `hypopep`: worst-case rates, performance-estimation solves and test-problem
//! runs for the gradient method on hypoconvex functions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod parse;
mod sweep;

use error::{CliResult, Outcome};
use hypopep_core::NumeratorKind;

#[derive(Parser)]
#[command(name = "hypopep", version, about = "Worst-case analysis of the gradient method on hypoconvex functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Proven bound on min |g_i|^2 for a step schedule.
    Rate(RateArgs),
    /// Best constant step for a curvature ratio.
    Optstep(OptstepArgs),
    /// Solve the performance-estimation SDP and compare with the bounds.
    Pep(PepArgs),
    /// Check that the explicit worst-case function attains the bound.
    Tightness(TightnessArgs),
    /// Build the explicit worst-case function and export it.
    Worstcase(WorstcaseArgs),
    /// Run the gradient method on a Huber or logistic test problem.
    Experiment(ExperimentArgs),
    /// Evaluate a command over a parameter grid.
    Sweep(SweepArgs),
    /// Estimate the intercept of the long-step rate from SDP solves.
    FitR(FitRArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Last,
    Opt,
}

impl From<Kind> for NumeratorKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Last => NumeratorKind::GapToLast,
            Kind::Opt => NumeratorKind::GapToOptimal,
        }
    }
}

#[derive(Args, Clone)]
pub struct ClassArgs {
    /// Curvature ratio mu/L, at most 0; `-inf` for unbounded lower curvature.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: String,
    /// Upper curvature.
    #[arg(long = "L", default_value_t = 1.0, allow_hyphen_values = true)]
    pub l: f64,
    /// Initial gap f_0 - f_N or f_0 - f_*.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = Kind::Opt)]
    pub kind: Kind,
}

#[derive(Args, Clone)]
pub struct ScheduleArgs {
    /// Normalized steps h_i, as a list or `a:step:b` range.
    #[arg(long, conflicts_with = "steps_file", allow_hyphen_values = true)]
    pub steps: Option<String>,
    /// File with one step per line.
    #[arg(long)]
    pub steps_file: Option<PathBuf>,
    /// Number of steps; a single step value is repeated N times.
    #[arg(long = "N")]
    pub n: Option<usize>,
}

#[derive(Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub sched: ScheduleArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Theorem,
    Asymptotic,
}

#[derive(Args)]
pub struct OptstepArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: String,
    #[arg(long, value_enum, default_value_t = Mode::Theorem)]
    pub mode: Mode,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct PepArgs {
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub sched: ScheduleArgs,
    /// Intercept for the conjectured long-step rate, if known.
    #[arg(long)]
    pub r: Option<f64>,
    /// Write the extracted worst-case triplets as JSON.
    #[arg(long)]
    pub emit_triplets: Option<PathBuf>,
    /// Relative KKT tolerance of the SDP solver.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Iteration cap of the SDP solver.
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct TightnessArgs {
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub sched: ScheduleArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct WorstcaseArgs {
    #[command(flatten)]
    pub class: ClassArgs,
    #[command(flatten)]
    pub sched: ScheduleArgs,
    /// Write `x, f, grad` samples here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 401)]
    pub samples: usize,
    /// Print the JSON descriptor of the pieces instead of the summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Huber,
    Logistic,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub problem: ProblemKind,
    /// Data matrix CSV; random data is generated when absent.
    #[arg(long = "A")]
    pub a: Option<PathBuf>,
    /// Target vector (Huber) or 0/1 labels (logistic), one per row.
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub rows: usize,
    #[arg(long, default_value_t = 10)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Huber threshold.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub delta_h: f64,
    /// Huber quadratic weight, at most 0.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "target_kappa")]
    pub mu: Option<f64>,
    /// Huber quadratic weight chosen to give this curvature ratio.
    #[arg(long, allow_hyphen_values = true)]
    pub target_kappa: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Weight of the smoothed l0 penalty.
    #[arg(long, default_value_t = 0.1)]
    pub weight: f64,
    #[command(flatten)]
    pub sched: ScheduleArgs,
    #[arg(long, value_enum, default_value_t = Kind::Last)]
    pub kind: Kind,
    /// Iterations of the unit-step run used to estimate f_* for `--kind opt`.
    #[arg(long, default_value_t = 20_000)]
    pub f_star_iters: usize,
    /// Amount subtracted from the f_* estimate before it is used.
    #[arg(long, default_value_t = 1e-6)]
    pub f_star_margin: f64,
    /// Write the trajectory CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Rate,
    Optstep,
    Pep,
    Tightness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub target: Target,
    /// Comma list or ranges of curvature ratios.
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: String,
    /// Constant steps to sweep.
    #[arg(long, conflicts_with = "steps_file")]
    pub h: Option<String>,
    /// A fixed schedule used at every grid point instead of `--h`.
    #[arg(long)]
    pub steps_file: Option<PathBuf>,
    /// Step counts.
    #[arg(long = "N", default_value = "1")]
    pub n: String,
    #[arg(long = "L", default_value_t = 1.0, allow_hyphen_values = true)]
    pub l: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = Kind::Opt)]
    pub kind: Kind,
    #[arg(long, value_enum, default_value_t = Mode::Theorem)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitRArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: String,
    #[arg(long, allow_hyphen_values = true)]
    pub h: f64,
    /// Step counts used in the fit.
    #[arg(long = "N")]
    pub n: String,
    #[arg(long = "L", default_value_t = 1.0, allow_hyphen_values = true)]
    pub l: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = Kind::Opt)]
    pub kind: Kind,
    #[arg(long)]
    pub json: bool,
}

fn run(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::Rate(a) => commands::rate(&a),
        Command::Optstep(a) => commands::optstep(&a),
        Command::Pep(a) => commands::pep(&a),
        Command::Tightness(a) => commands::tightness(&a),
        Command::Worstcase(a) => commands::worstcase(&a),
        Command::Experiment(a) => commands::experiment(&a),
        Command::Sweep(a) => sweep::sweep(&a),
        Command::FitR(a) => commands::fit_r(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{}", out.text);
            match out.failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {}", e.message());
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
