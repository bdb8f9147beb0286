//! Grid evaluation. Points run in parallel; rows come out in grid order.

use std::fs::File;
use std::io::Write;

use hypopep_core::gmlab::fmt_f64;
use hypopep_core::rates::{nstep_bound, optimal_step};
use hypopep_core::worstcase::verify_tightness;
use hypopep_core::{Kappa, NumeratorKind, StepSchedule};
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::commands::{class_of, mode_of, pep_point, reference_bound, tag};
use crate::error::{CliError, CliResult, Outcome};
use crate::parse::{parse_counts, parse_floats, read_steps_file};
use crate::{Format, SweepArgs, Target};

/// Worker count from `HYPOPEP_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("HYPOPEP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Validation(format!("HYPOPEP_THREADS must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Validation(e.to_string()))
}

#[derive(Clone)]
enum Steps {
    Constant(f64, usize),
    Fixed(Vec<f64>),
}

struct Point {
    kappa: f64,
    steps: Steps,
}

/// Typed cell; rendered as text for CSV and as a JSON value otherwise.
enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Bool(b) => Value::from(*b),
            Cell::Empty => Value::Null,
        }
    }
}

fn columns(target: Target) -> &'static [&'static str] {
    match target {
        Target::Rate => &["kappa", "h", "n", "kind", "denominator", "bound", "regime", "error"],
        Target::Optstep => &["kappa", "mode", "h_star", "branch", "error"],
        Target::Pep => &["kappa", "h", "n", "kind", "value", "status", "reference", "reference_kind", "error"],
        Target::Tightness => &["kappa", "h", "n", "kind", "bound", "min_grad_sq", "pass", "error"],
    }
}

fn kappa_cell(k: f64) -> Cell {
    if k == f64::NEG_INFINITY {
        Cell::Text("-inf".into())
    } else {
        Cell::Num(k)
    }
}

/// Evaluates one grid point. The leading cells identify the point; the
/// trailing ones hold results, or blanks and an error message.
fn evaluate(a: &SweepArgs, p: &Point) -> Vec<Cell> {
    let kind: NumeratorKind = a.kind.into();
    let (h_cell, n_cell) = match &p.steps {
        Steps::Constant(h, n) => (Cell::Num(*h), Cell::Int(*n)),
        Steps::Fixed(s) => (Cell::Empty, Cell::Int(s.len())),
    };
    let mut row = vec![kappa_cell(p.kappa)];
    if a.target == Target::Optstep {
        row.push(Cell::Text(tag(&mode_of(a.mode))));
    } else {
        row.extend([h_cell, n_cell, Cell::Text(tag(&kind))]);
    }
    let width = columns(a.target).len();
    match compute(a, p, kind) {
        Ok(cells) => {
            row.extend(cells);
            row.push(Cell::Empty);
        }
        Err(e) => {
            while row.len() < width - 1 {
                row.push(Cell::Empty);
            }
            row.push(Cell::Text(e.message().to_string()));
        }
    }
    row
}

fn compute(a: &SweepArgs, p: &Point, kind: NumeratorKind) -> CliResult<Vec<Cell>> {
    let kappa = Kappa::new(p.kappa).map_err(|e| CliError::flag("--kappa", e))?;
    if a.target == Target::Optstep {
        let s = optimal_step(kappa, mode_of(a.mode))?;
        return Ok(vec![Cell::Num(s.h_star), Cell::Text(tag(&s.branch))]);
    }
    let cls = class_of(kappa, a.l)?;
    let sched = match &p.steps {
        Steps::Constant(h, n) => StepSchedule::constant(*h, *n)?,
        Steps::Fixed(s) => StepSchedule::new(s.clone())?,
    };
    Ok(match a.target {
        Target::Rate => {
            let r = nstep_bound(&cls, &sched, a.delta, kind)?;
            vec![Cell::Num(r.denominator), Cell::Num(r.bound), Cell::Text(tag(&r.regime))]
        }
        Target::Pep => {
            let (value, status) = pep_point(&cls, &sched, a.delta, kind)?;
            let reference = reference_bound(&cls, &sched, a.delta, kind, None);
            vec![
                Cell::Num(value),
                Cell::Text(tag(&status)),
                reference.map_or(Cell::Empty, |r| Cell::Num(r.0)),
                reference.map_or(Cell::Empty, |r| Cell::Text(r.1.into())),
            ]
        }
        Target::Tightness => {
            let r = verify_tightness(&cls, &sched, a.delta, kind, 1e-9)?;
            vec![Cell::Num(r.bound), Cell::Num(r.min_grad_sq), Cell::Bool(r.pass)]
        }
        Target::Optstep => unreachable!("handled above"),
    })
}

fn grid(a: &SweepArgs) -> CliResult<Vec<Point>> {
    let kappas = parse_floats(&a.kappa).map_err(|e| CliError::flag("--kappa", e))?;
    if kappas.is_empty() {
        return Err(CliError::flag("--kappa", "empty grid"));
    }
    if a.target == Target::Optstep {
        return Ok(kappas
            .into_iter()
            .map(|kappa| Point {
                kappa,
                steps: Steps::Fixed(Vec::new()),
            })
            .collect());
    }
    let shapes: Vec<Steps> = match (&a.h, &a.steps_file) {
        (_, Some(path)) => vec![Steps::Fixed(read_steps_file(path).map_err(|e| CliError::flag("--steps-file", e))?)],
        (Some(h), None) => {
            let hs = parse_floats(h).map_err(|e| CliError::flag("--h", e))?;
            let ns = parse_counts(&a.n).map_err(|e| CliError::flag("--N", e))?;
            if ns.is_empty() || ns.contains(&0) {
                return Err(CliError::flag("--N", "step counts must be at least 1"));
            }
            hs.iter()
                .flat_map(|&h| ns.iter().map(move |&n| Steps::Constant(h, n)))
                .collect()
        }
        (None, None) => return Err(CliError::Validation("one of --h or --steps-file is required".into())),
    };
    Ok(kappas
        .iter()
        .flat_map(|&kappa| {
            shapes.iter().map(move |s| Point {
                kappa,
                steps: s.clone(),
            })
        })
        .collect())
}

pub fn sweep(a: &SweepArgs) -> CliResult<Outcome> {
    if !(a.l > 0.0 && a.l.is_finite()) {
        return Err(CliError::flag("--L", format!("must be positive and finite, got {}", a.l)));
    }
    if !(a.delta > 0.0 && a.delta.is_finite()) {
        return Err(CliError::flag("--delta", format!("must be positive and finite, got {}", a.delta)));
    }
    let points = grid(a)?;
    let rows: Vec<Vec<Cell>> = thread_pool()?.install(|| points.par_iter().map(|p| evaluate(a, p)).collect());
    let cols = columns(a.target);
    let body = match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(cols)?;
            for r in &rows {
                w.write_record(r.iter().map(Cell::csv))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?)
                .expect("csv output is utf-8")
        }
        Format::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let m: Map<String, Value> = cols.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect();
                    Value::Object(m)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&arr).expect("plain data");
            s.push('\n');
            s
        }
    };
    match &a.out {
        Some(path) => {
            File::create(path)?.write_all(body.as_bytes())?;
            let failed = rows.iter().filter(|r| !matches!(r.last(), Some(Cell::Empty))).count();
            Ok(Outcome::ok(format!("wrote {} rows to {} ({failed} with errors)\n", rows.len(), path.display())))
        }
        None => Ok(Outcome::ok(body)),
    }
}
