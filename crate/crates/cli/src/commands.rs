use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;

use hypopep_core::gmlab::{
    convex_grad_monotonicity, estimate_f_star, fmt_f64, huber_mu_for_kappa, make_huber_problem,
    make_logistic_l0_problem, one_step_certificate, read_matrix_csv, read_vector_csv, run_gm,
    write_trajectory_csv, CheckStatus, TestProblem,
};
use hypopep_core::pep::{extract_triplets, gram_rank, solve_pep, PepProblem};
use hypopep_core::rates::{
    conjectured_bound_convex, conjectured_bound_third_regime, fit_r as fit_intercept, nstep_bound,
    optimal_step, step_threshold, OptimalStepMode,
};
use hypopep_core::worstcase::{build_worst_case, verify_tightness};
use hypopep_core::{CurvatureClass, Kappa, NumeratorKind, StepSchedule};
use hypopep_sdp::{SolveStatus, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult, Outcome};
use crate::parse::{parse_counts, parse_floats, read_steps_file};
use crate::sweep::thread_pool;
use crate::{
    ClassArgs, ExperimentArgs, FitRArgs, Mode, OptstepArgs, PepArgs, ProblemKind, RateArgs, ScheduleArgs,
    TightnessArgs, WorstcaseArgs,
};

pub fn parse_kappa(s: &str) -> CliResult<Kappa> {
    let v = parse_floats(s).map_err(|e| CliError::flag("--kappa", e))?;
    match v.as_slice() {
        [k] => Kappa::new(*k).map_err(|e| CliError::flag("--kappa", e)),
        _ => Err(CliError::flag("--kappa", "expected a single value")),
    }
}

pub fn class_of(kappa: Kappa, l: f64) -> CliResult<CurvatureClass> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(CliError::flag("--L", format!("must be positive and finite, got {l}")));
    }
    Ok(CurvatureClass::from_kappa(kappa, l)?)
}

fn class_args(c: &ClassArgs) -> CliResult<(CurvatureClass, NumeratorKind)> {
    let cls = class_of(parse_kappa(&c.kappa)?, c.l)?;
    Ok((cls, c.kind.into()))
}

pub fn schedule(a: &ScheduleArgs) -> CliResult<StepSchedule> {
    let steps = match (&a.steps, &a.steps_file) {
        (Some(s), _) => parse_floats(s).map_err(|e| CliError::flag("--steps", e))?,
        (None, Some(p)) => read_steps_file(p).map_err(|e| CliError::flag("--steps-file", e))?,
        (None, None) => return Err(CliError::Validation("one of --steps or --steps-file is required".into())),
    };
    let steps = match (a.n, steps.len()) {
        (Some(0), _) => return Err(CliError::flag("--N", "must be at least 1")),
        (Some(n), 1) => vec![steps[0]; n],
        (Some(n), len) if n != len => {
            return Err(CliError::flag("--N", format!("{n} does not match the {len} steps given")))
        }
        _ => steps,
    };
    StepSchedule::new(steps).map_err(|e| CliError::flag("--steps", e))
}

/// snake_case tag of a serializable enum.
pub fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data");
    s.push('\n');
    s
}

fn field(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}: {value}");
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "n/a".into())
}

#[derive(Serialize)]
struct RateOut {
    kappa: String,
    l: f64,
    delta: f64,
    kind: NumeratorKind,
    threshold: f64,
    steps: Vec<f64>,
    p: Vec<f64>,
    denominator: f64,
    bound: f64,
    regime: String,
    conjectured: bool,
}

pub fn rate(a: &RateArgs) -> CliResult<Outcome> {
    let (cls, kind) = class_args(&a.class)?;
    let sched = schedule(&a.sched)?;
    let r = nstep_bound(&cls, &sched, a.class.delta, kind)?;
    let out = RateOut {
        kappa: cls.kappa().to_string(),
        l: cls.l(),
        delta: a.class.delta,
        kind,
        threshold: step_threshold(cls.kappa())?.value,
        steps: sched.steps().to_vec(),
        p: r.p.clone(),
        denominator: r.denominator,
        bound: r.bound,
        regime: tag(&r.regime),
        conjectured: r.is_conjectured(),
    };
    if a.json {
        return Ok(Outcome::ok(json(&out)));
    }
    let mut s = String::new();
    field(&mut s, "kappa", &out.kappa);
    field(&mut s, "L", f(out.l));
    field(&mut s, "delta", f(out.delta));
    field(&mut s, "kind", tag(&kind));
    field(&mut s, "threshold", f(out.threshold));
    s.push_str("step,h,p\n");
    for (i, (h, p)) in out.steps.iter().zip(&out.p).enumerate() {
        let _ = writeln!(s, "{i},{},{}", f(*h), f(*p));
    }
    field(&mut s, "denominator", f(out.denominator));
    field(&mut s, "bound", f(out.bound));
    field(&mut s, "regime", &out.regime);
    field(&mut s, "conjectured", out.conjectured);
    Ok(Outcome::ok(s))
}

pub fn mode_of(m: Mode) -> OptimalStepMode {
    match m {
        Mode::Theorem => OptimalStepMode::Theorem,
        Mode::Asymptotic => OptimalStepMode::Asymptotic,
    }
}

#[derive(Serialize)]
struct OptstepOut {
    kappa: String,
    mode: OptimalStepMode,
    h_star: f64,
    branch: String,
    threshold: f64,
}

pub fn optstep(a: &OptstepArgs) -> CliResult<Outcome> {
    let kappa = parse_kappa(&a.kappa)?;
    let s = optimal_step(kappa, mode_of(a.mode))?;
    let out = OptstepOut {
        kappa: kappa.to_string(),
        mode: mode_of(a.mode),
        h_star: s.h_star,
        branch: tag(&s.branch),
        threshold: step_threshold(kappa)?.value,
    };
    if a.json {
        return Ok(Outcome::ok(json(&out)));
    }
    let mut t = String::new();
    field(&mut t, "kappa", &out.kappa);
    field(&mut t, "mode", tag(&out.mode));
    field(&mut t, "h_star", f(out.h_star));
    field(&mut t, "branch", &out.branch);
    field(&mut t, "threshold", f(out.threshold));
    Ok(Outcome::ok(t))
}

/// The bound an SDP value should be compared with: the proven rate when the
/// steps allow it, otherwise a conjectured rate for constant steps.
pub fn reference_bound(
    cls: &CurvatureClass,
    sched: &StepSchedule,
    delta: f64,
    kind: NumeratorKind,
    r: Option<f64>,
) -> Option<(f64, &'static str)> {
    if let Ok(b) = nstep_bound(cls, sched, delta, kind) {
        return Some((b.bound, "proven"));
    }
    let h = sched.steps()[0];
    if sched.steps().iter().any(|&x| x != h) {
        return None;
    }
    if cls.kappa() == Kappa::Finite(0.0) {
        if let Ok(b) = conjectured_bound_convex(h, sched.n(), cls.l(), delta, kind) {
            return Some((b.bound, "conjectured_convex"));
        }
    }
    let b = conjectured_bound_third_regime(h, sched.n(), cls, delta, r?, kind).ok()?;
    Some((b.bound, "conjectured_third_regime"))
}

#[derive(Serialize)]
struct PepOut {
    kappa: String,
    l: f64,
    delta: f64,
    kind: NumeratorKind,
    steps: Vec<f64>,
    value: f64,
    status: SolveStatus,
    iterations: usize,
    kkt_residual: f64,
    reference: Option<f64>,
    reference_kind: Option<&'static str>,
    relative_difference: Option<f64>,
    gram_rank: usize,
}

fn solver_options(tol: f64, max_iter: usize) -> CliResult<SolverOptions> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CliError::flag("--tol", format!("must be in (0, 1), got {tol}")));
    }
    if max_iter == 0 {
        return Err(CliError::flag("--max-iter", "must be at least 1"));
    }
    Ok(SolverOptions { tol, max_iter })
}

pub fn pep(a: &PepArgs) -> CliResult<Outcome> {
    let (cls, kind) = class_args(&a.class)?;
    let sched = schedule(&a.sched)?;
    let p = PepProblem::new(cls, sched.clone(), a.class.delta, kind)?;
    let sol = solve_pep(&p, &solver_options(a.tol, a.max_iter)?)?;
    let reference = reference_bound(&cls, &sched, a.class.delta, kind, a.r);
    let out = PepOut {
        kappa: cls.kappa().to_string(),
        l: cls.l(),
        delta: a.class.delta,
        kind,
        steps: sched.steps().to_vec(),
        value: sol.value,
        status: sol.status,
        iterations: sol.sdp.iterations,
        kkt_residual: sol.sdp.kkt_residuals.max(),
        reference: reference.map(|r| r.0),
        reference_kind: reference.map(|r| r.1),
        relative_difference: reference.map(|r| (sol.value - r.0) / r.0),
        gram_rank: gram_rank(&sol.sdp),
    };
    let optimal = sol.is_optimal();
    if optimal {
        if let Some(path) = &a.emit_triplets {
            let ts = extract_triplets(&p, &sol.sdp)?;
            std::fs::write(path, ts.to_json())?;
        }
    }
    let text = if a.json {
        json(&out)
    } else {
        let mut s = String::new();
        field(&mut s, "kappa", &out.kappa);
        field(&mut s, "kind", tag(&kind));
        field(&mut s, "N", sched.n());
        field(&mut s, "status", tag(&out.status));
        field(&mut s, "iterations", out.iterations);
        field(&mut s, "kkt_residual", f(out.kkt_residual));
        field(&mut s, "value", f(out.value));
        field(&mut s, "reference", opt_f(out.reference));
        field(&mut s, "reference_kind", out.reference_kind.unwrap_or("none"));
        field(&mut s, "relative_difference", opt_f(out.relative_difference));
        field(&mut s, "gram_rank", out.gram_rank);
        s
    };
    Ok(Outcome::failing_if(text, !optimal, || {
        CliError::Solver(format!("SDP solver stopped with status {}", tag(&sol.status)))
    }))
}

pub fn tightness(a: &TightnessArgs) -> CliResult<Outcome> {
    let (cls, kind) = class_args(&a.class)?;
    let sched = schedule(&a.sched)?;
    let r = verify_tightness(&cls, &sched, a.class.delta, kind, a.tol)?;
    let text = if a.json {
        json(&r)
    } else {
        let mut s = String::new();
        let line = |s: &mut String, name: &str, c: &hypopep_core::worstcase::CheckResult| {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{verdict} {name} (residual {})", f(c.residual));
        };
        field(&mut s, "bound", f(r.bound));
        field(&mut s, "min_grad_sq", f(r.min_grad_sq));
        line(&mut s, "iterates match the construction", &r.iterates_match);
        line(&mut s, "bound attained", &r.bound_attained);
        line(&mut s, "samples interpolable", &r.interpolable);
        line(&mut s, "initial gap equals delta", &r.gap_matches);
        let _ = writeln!(s, "{}", if r.pass { "PASS" } else { "FAIL" });
        s
    };
    Ok(Outcome::failing_if(text, !r.pass, || {
        CliError::Check("the constructed function does not attain the bound".into())
    }))
}

pub fn worstcase(a: &WorstcaseArgs) -> CliResult<Outcome> {
    let (cls, kind) = class_args(&a.class)?;
    let sched = schedule(&a.sched)?;
    let w = build_worst_case(&cls, &sched, a.class.delta, kind)?;
    if let Some(path) = &a.csv {
        w.write_samples_csv(a.samples, BufWriter::new(File::create(path)?))?;
    }
    if a.json {
        let mut s = w.to_json();
        s.push('\n');
        return Ok(Outcome::ok(s));
    }
    let mut s = String::new();
    field(&mut s, "U", f(w.u));
    field(&mut s, "bound", f(w.u * w.u));
    field(&mut s, "pieces", w.pieces.len());
    s.push_str("i,x,f,inflection\n");
    for i in 0..w.iterates.len() {
        let infl = w.inflections.get(i).map(|v| f(*v)).unwrap_or_default();
        let _ = writeln!(s, "{i},{},{},{infl}", f(w.iterates[i]), f(w.values[i]));
    }
    let (xm, fm) = w.minimizer();
    field(&mut s, "minimizer", format!("{} {}", f(xm), f(fm)));
    Ok(Outcome::ok(s))
}

fn synthetic_problem(a: &ExperimentArgs) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let m = DMatrix::from_fn(a.rows, a.cols, |_, _| rng.random_range(-1.0..1.0));
    let v = match a.problem {
        ProblemKind::Huber => DVector::from_fn(a.rows, |_, _| rng.random_range(-3.0..3.0)),
        ProblemKind::Logistic => {
            let truth = DVector::from_fn(a.cols, |_, _| rng.random_range(-2.0..2.0));
            let z = &m * truth;
            DVector::from_fn(a.rows, |i, _| {
                let noisy = z[i] + rng.random_range(-0.5..0.5);
                if noisy > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
        }
    };
    (m, v)
}

fn load_problem(a: &ExperimentArgs) -> CliResult<TestProblem> {
    let (m, v) = match (&a.a, &a.b) {
        (Some(pa), Some(pb)) => {
            let m = read_matrix_csv(File::open(pa)?).map_err(|e| CliError::flag("--A", e))?;
            let v = read_vector_csv(File::open(pb)?).map_err(|e| CliError::flag("--b", e))?;
            (m, v)
        }
        (None, None) => {
            if a.rows == 0 || a.cols == 0 {
                return Err(CliError::flag("--rows/--cols", "must be positive"));
            }
            synthetic_problem(a)
        }
        _ => return Err(CliError::Validation("--A and --b must be given together".into())),
    };
    Ok(match a.problem {
        ProblemKind::Huber => {
            let mu = match (a.mu, a.target_kappa) {
                (Some(mu), _) => mu,
                (None, Some(k)) => {
                    if !(k <= 0.0 && k.is_finite()) {
                        return Err(CliError::flag("--target-kappa", "must be finite and at most 0"));
                    }
                    huber_mu_for_kappa(&m, a.delta_h, k)
                }
                (None, None) => 0.0,
            };
            make_huber_problem(m, v, a.delta_h, mu).map_err(|e| match e {
                hypopep_core::Error::PositiveMu(_) => CliError::flag("--mu", e),
                other => other.into(),
            })?
        }
        ProblemKind::Logistic => make_logistic_l0_problem(m, v, a.lambda, a.sigma, a.weight)?,
    })
}

#[derive(Serialize)]
struct ExperimentOut {
    problem: String,
    kappa: String,
    l: f64,
    n: usize,
    f0: f64,
    f_last: f64,
    min_grad_sq: f64,
    min_grad_index: usize,
    kind: NumeratorKind,
    delta: f64,
    bound: Option<f64>,
    bound_respected: Option<bool>,
    certificates_checked: usize,
    certificates_passed: usize,
    convex_monotonicity: CheckStatus,
}

pub fn experiment(a: &ExperimentArgs) -> CliResult<Outcome> {
    let tp = load_problem(a)?;
    let sched = schedule(&a.sched)?;
    let kind: NumeratorKind = a.kind.into();
    let traj = run_gm(&tp, &sched).map_err(|e| CliError::Solver(e.to_string()))?;
    let f0 = traj.iterates[0].f;
    let f_last = traj.iterates.last().expect("nonempty").f;
    let delta = match kind {
        NumeratorKind::GapToLast => f0 - f_last,
        NumeratorKind::GapToOptimal => {
            let est = estimate_f_star(&tp, a.f_star_iters).map_err(|e| CliError::Solver(e.to_string()))?;
            f0 - (est - a.f_star_margin)
        }
    };
    let bound = if delta > 0.0 {
        nstep_bound(&tp.cls, &sched, delta, kind).ok().map(|r| r.bound)
    } else {
        None
    };
    let respected = match bound {
        Some(b) => Some(traj.min_grad_sq <= b * (1.0 + 1e-9)),
        // No decrease at all only happens from a stationary start.
        None if delta <= 0.0 => Some(traj.min_grad_sq == 0.0),
        None => None,
    };

    let threshold = step_threshold(tp.cls.kappa())?.value;
    let mut checked = 0;
    let mut passed = 0;
    for (i, w) in traj.iterates.windows(2).enumerate() {
        let h = sched.steps()[i];
        if h <= threshold {
            checked += 1;
            if one_step_certificate(&w[0], &w[1], h, &tp.cls, 1e-9).pass {
                passed += 1;
            }
        }
    }
    let mono = convex_grad_monotonicity(&traj, &tp.cls, 1e-10);

    if let Some(path) = &a.out {
        let d = if delta > 0.0 { delta } else { 1.0 };
        write_trajectory_csv(&traj, &tp.cls, d, kind, BufWriter::new(File::create(path)?))?;
    }

    let out = ExperimentOut {
        problem: tp.name.clone(),
        kappa: tp.cls.kappa().to_string(),
        l: tp.cls.l(),
        n: sched.n(),
        f0,
        f_last,
        min_grad_sq: traj.min_grad_sq,
        min_grad_index: traj.min_grad_index,
        kind,
        delta,
        bound,
        bound_respected: respected,
        certificates_checked: checked,
        certificates_passed: passed,
        convex_monotonicity: mono.status,
    };
    let failed = respected == Some(false) || passed < checked || mono.status == CheckStatus::Fail;
    let text = if a.json {
        json(&out)
    } else {
        let mut s = String::new();
        field(&mut s, "problem", &out.problem);
        field(&mut s, "kappa", &out.kappa);
        field(&mut s, "L", f(out.l));
        field(&mut s, "N", out.n);
        field(&mut s, "f0", f(out.f0));
        field(&mut s, "f_last", f(out.f_last));
        field(&mut s, "min_grad_sq", f(out.min_grad_sq));
        field(&mut s, "min_grad_index", out.min_grad_index);
        field(&mut s, "kind", tag(&kind));
        field(&mut s, "delta", f(out.delta));
        field(&mut s, "bound", opt_f(out.bound));
        field(
            &mut s,
            "bound_respected",
            out.bound_respected.map(|b| b.to_string()).unwrap_or_else(|| "n/a".into()),
        );
        field(&mut s, "certificates", format!("{passed}/{checked}"));
        field(&mut s, "convex_monotonicity", tag(&out.convex_monotonicity));
        s
    };
    Ok(Outcome::failing_if(text, failed, || {
        CliError::Check("a bound or per-step certificate does not hold".into())
    }))
}

#[derive(Serialize)]
struct FitOut {
    kappa: String,
    h: f64,
    kind: NumeratorKind,
    fit: hypopep_core::rates::FitR,
}

pub fn fit_r(a: &FitRArgs) -> CliResult<Outcome> {
    let cls = class_of(parse_kappa(&a.kappa)?, a.l)?;
    let kind: NumeratorKind = a.kind.into();
    let counts = parse_counts(&a.n).map_err(|e| CliError::flag("--N", e))?;
    if counts.contains(&0) || counts.is_empty() {
        return Err(CliError::flag("--N", "step counts must be at least 1"));
    }
    if !(a.h > 0.0 && a.h < 2.0) {
        return Err(CliError::flag("--h", format!("must be in (0, 2), got {}", a.h)));
    }
    let opts = SolverOptions::default();
    let solve = |n: usize| -> CliResult<(usize, f64)> {
        let sched = StepSchedule::constant(a.h, n)?;
        let p = PepProblem::new(cls, sched, a.delta, kind)?;
        let s = solve_pep(&p, &opts)?;
        if !s.is_optimal() {
            return Err(CliError::Solver(format!("SDP at N = {n} stopped with status {}", tag(&s.status))));
        }
        Ok((n, s.value))
    };
    let data: Vec<(usize, f64)> = thread_pool()?
        .install(|| counts.par_iter().map(|&n| solve(n)).collect::<CliResult<Vec<_>>>())?;
    let fit = fit_intercept(&cls, a.h, a.delta, kind, &data)?;
    let out = FitOut {
        kappa: cls.kappa().to_string(),
        h: a.h,
        kind,
        fit,
    };
    if a.json {
        return Ok(Outcome::ok(json(&out)));
    }
    let fit = &out.fit;
    let mut s = String::new();
    field(&mut s, "r", f(fit.r));
    field(&mut s, "slope", f(fit.slope));
    field(&mut s, "free_slope", f(fit.free_slope));
    field(&mut s, "max_residual", f(fit.max_residual));
    field(&mut s, "rms_residual", f(fit.rms_residual));
    s.push_str("n,value,denominator,geometric,on_linear_branch,residual\n");
    for p in &fit.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.n,
            f(p.value),
            f(p.linear_denominator),
            f(p.geometric),
            p.on_linear_branch,
            f(p.residual)
        );
    }
    Ok(Outcome::ok(s))
}

/// Solves and, when optimal, confirms the triplets can be extracted.
pub fn pep_point(
    cls: &CurvatureClass,
    sched: &StepSchedule,
    delta: f64,
    kind: NumeratorKind,
) -> CliResult<(f64, SolveStatus)> {
    let p = PepProblem::new(*cls, sched.clone(), delta, kind)?;
    let s = solve_pep(&p, &SolverOptions::default())?;
    if s.is_optimal() {
        extract_triplets(&p, &s.sdp)?;
    }
    Ok((s.value, s.status))
}
