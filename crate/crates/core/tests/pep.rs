use std::collections::BTreeMap;

use approx::assert_relative_eq;
use hypopep_core::interpolation::check_interpolable;
use hypopep_core::pep::*;
use hypopep_core::rates::{nstep_bound, one_step_p, step_threshold};
use hypopep_core::worstcase::build_worst_case;
use hypopep_core::{CurvatureClass, Kappa, NumeratorKind, StepSchedule};
use hypopep_sdp::{KktResiduals, SdpSolution, SolveStatus, SolverOptions};

const KINDS: [NumeratorKind; 2] = [NumeratorKind::GapToLast, NumeratorKind::GapToOptimal];

fn class(kappa: f64, l: f64) -> CurvatureClass {
    CurvatureClass::from_kappa(Kappa::new(kappa).unwrap(), l).unwrap()
}

fn pep(kappa: f64, l: f64, delta: f64, steps: &[f64], kind: NumeratorKind) -> PepProblem {
    PepProblem::new(class(kappa, l), StepSchedule::new(steps.to_vec()).unwrap(), delta, kind).unwrap()
}

fn solve(p: &PepProblem) -> PepSolution {
    let s = solve_pep(p, &SolverOptions::default()).unwrap();
    assert!(s.is_optimal(), "{:?} {:?}", s.status, s.sdp.kkt_residuals);
    s
}

/// Row labels listed by walking the index sets directly.
fn enumerate_rows(n: usize, kind: NumeratorKind) -> Vec<String> {
    let opt = kind == NumeratorKind::GapToOptimal;
    let points = n + 1 + usize::from(opt);
    let mut rows = Vec::new();
    for i in 0..points {
        for j in 0..points {
            if i != j {
                rows.push(format!("interp({i},{j})"));
            }
        }
    }
    if opt {
        for i in 0..=n {
            rows.push(format!("descent({i})"));
        }
    }
    rows.push("initial".into());
    for i in 0..=n {
        rows.push(format!("grad({i})"));
    }
    rows
}

#[test]
fn row_structure() {
    for n in 1..=5 {
        for kind in KINDS {
            let sdp = build_sdp(&pep(-1.0, 1.0, 1.0, &vec![1.0; n], kind)).unwrap();
            assert_eq!(sdp.gram_dim, n + 2);
            let labels: Vec<String> = sdp.constraints.iter().map(|c| c.label.clone().unwrap()).collect();
            assert_eq!(labels, enumerate_rows(n, kind));
            for c in &sdp.constraints {
                let d = sdp.gram_dim;
                for r in 0..d {
                    for s in 0..d {
                        assert_eq!(c.a[r * d + s], c.a[s * d + r]);
                    }
                }
            }
        }
    }
    let last = build_sdp(&pep(-1.0, 1.0, 1.0, &[1.0], NumeratorKind::GapToLast)).unwrap();
    assert_eq!(last.constraints.len(), 5);
    assert_eq!(last.vars, vec!["f0".to_string(), BOUND_VAR.to_string()]);
    let opt = build_sdp(&pep(-1.0, 1.0, 1.0, &[1.0], NumeratorKind::GapToOptimal)).unwrap();
    assert_eq!(opt.constraints.len(), 11);
    assert_eq!(opt.gram_dim, 3);
}

/// Lifts a one-dimensional worst-case function into the SDP variables.
fn lift(p: &PepProblem) -> (Vec<f64>, BTreeMap<String, f64>, f64) {
    let w = build_worst_case(&p.cls, &p.sched, p.delta, p.init_kind).unwrap();
    let n = p.n();
    let mut v = vec![w.u; n + 1];
    // The optimum of the construction is at the origin, like the PEP's.
    v.push(w.iterates[0]);
    let shift = match p.init_kind {
        NumeratorKind::GapToOptimal => 0.0,
        NumeratorKind::GapToLast => w.values[n],
    };
    let gram: Vec<f64> = v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    let mut values = BTreeMap::new();
    for i in 0..=n {
        values.insert(f_var(i), w.values[i] - shift);
    }
    values.insert(BOUND_VAR.into(), w.u * w.u);
    (gram, values, w.u * w.u)
}

#[test]
fn worst_case_functions_are_feasible_points() {
    for k in [0.0, -0.5, -2.0] {
        for steps in [vec![1.0], vec![0.5, 1.0, 0.25], vec![0.75; 4]] {
            for kind in KINDS {
                let p = pep(k, 2.0, 1.5, &steps, kind);
                let sdp = build_sdp(&p).unwrap();
                let (gram, values, l) = lift(&p);
                for c in &sdp.constraints {
                    let s = c.evaluate(&gram, &values);
                    assert!(s >= -1e-12, "{:?}: {s}", c.label);
                }
                assert_relative_eq!(sdp.objective.evaluate(&gram, &values), l, max_relative = 1e-14);
                // The lifted point is optimal, so the SDP cannot go higher.
                let sol = solve(&p);
                assert_relative_eq!(sol.value, l, max_relative = 1e-6);
            }
        }
    }
}

#[test]
fn one_step_example_and_triplets() {
    let p = pep(-1.0, 1.0, 1.0, &[1.0], NumeratorKind::GapToOptimal);
    let sol = solve(&p);
    assert!((sol.value - 0.8).abs() < 1e-6);
    let ts = extract_triplets(&p, &sol.sdp).unwrap();
    assert_eq!(ts.len(), 3);
    let star = &ts.triplets()[2];
    assert!(star.x.iter().chain(&star.g).all(|&v| v == 0.0));
    assert_eq!(star.f, 0.0);
    assert!(check_interpolable(&ts, &p.cls, 1e-6).unwrap().feasible);
}

#[test]
fn scaling_is_homogeneous() {
    let p = pep(-1.0, 2.0, 3.0, &[1.0], NumeratorKind::GapToOptimal);
    let (q, rescale) = normalize_homogeneous(&p);
    assert_eq!((q.cls.l(), q.delta), (1.0, 1.0));
    assert_eq!(rescale.factor(), 6.0);
    assert_relative_eq!(solve(&p).value, 6.0 * solve(&q).value, max_relative = 1e-7);

    let unit = pep(-0.5, 1.0, 1.0, &[0.5, 1.2], NumeratorKind::GapToLast);
    let (same, r) = normalize_homogeneous(&unit);
    assert_eq!(same, unit);
    assert_eq!(r.factor(), 1.0);
}

#[test]
fn single_step_reproduces_constant() {
    for k in [0.0, -0.3, -1.0, -4.0] {
        let hbar = step_threshold(Kappa::Finite(k)).unwrap().value;
        for frac in [0.1, 0.4, 0.7, 1.0 / hbar, 0.85, 1.0] {
            let h = frac * hbar;
            let p = pep(k, 1.5, 2.0, &[h], NumeratorKind::GapToLast);
            let expected = 2.0 * 1.5 * 2.0 / one_step_p(h, Kappa::Finite(k)).unwrap().p;
            assert_relative_eq!(solve(&p).value, expected, max_relative = 1e-6);
        }
    }
}

#[test]
fn optimum_sits_at_analytic_bound() {
    let schedules: [&[f64]; 5] = [&[0.3, 0.9], &[1.0, 1.0, 1.0], &[0.5, 0.25, 0.75, 1.0], &[1.2, 1.3], &[1.1, 0.6, 1.4]];
    for k in [0.0, -0.5, -1.0, -3.0] {
        let hbar = step_threshold(Kappa::Finite(k)).unwrap().value;
        for steps in schedules {
            if steps.iter().any(|&h| h > hbar) {
                continue;
            }
            for kind in KINDS {
                let p = pep(k, 1.0, 1.0, steps, kind);
                let got = solve(&p).value;
                let bound = nstep_bound(&p.cls, &p.sched, 1.0, kind).unwrap().bound;
                assert!(got <= bound * (1.0 + 1e-6), "k={k} {steps:?} {kind:?}: {got} > {bound}");
                if steps.iter().all(|&h| h <= 1.0) {
                    assert!(got >= bound * (1.0 - 1e-4), "k={k} {steps:?} {kind:?}: {got} < {bound}");
                }
            }
        }
    }
}

#[test]
fn more_steps_never_hurt() {
    for (k, h) in [(-1.0, 1.2), (0.0, 1.5), (-0.5, 1.7)] {
        let mut prev = f64::INFINITY;
        for n in 1..=6 {
            let v = solve(&pep(k, 1.0, 1.0, &vec![h; n], NumeratorKind::GapToOptimal)).value;
            assert!(v <= prev * (1.0 + 1e-7), "k={k} h={h} n={n}");
            prev = v;
        }
    }
}

#[test]
fn extracted_triplets_interpolate() {
    for (k, steps) in [(-1.0, vec![1.2, 0.8]), (-2.0, vec![1.5; 3]), (0.0, vec![1.0, 0.5])] {
        for kind in KINDS {
            let p = pep(k, 1.0, 1.0, &steps, kind);
            let sol = solve(&p);
            let ts = extract_triplets(&p, &sol.sdp).unwrap();
            assert_eq!(ts.len(), steps.len() + 1 + usize::from(kind == NumeratorKind::GapToOptimal));
            let report = check_interpolable(&ts, &p.cls, 1e-6).unwrap();
            assert!(report.feasible);
            let min_g = ts.triplets()[..=steps.len()]
                .iter()
                .map(|t| t.g.iter().map(|v| v * v).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(min_g, sol.value, max_relative = 1e-5);
            assert!(gram_rank(&sol.sdp) <= p.gram_dim());
        }
    }
}

#[test]
fn zero_gram_gives_zero_triplets() {
    let p = pep(-1.0, 1.0, 1.0, &[1.0, 1.0], NumeratorKind::GapToOptimal);
    let dim = p.gram_dim();
    let mut linear_values = BTreeMap::new();
    for i in 0..=2 {
        linear_values.insert(f_var(i), 0.0);
    }
    linear_values.insert(BOUND_VAR.into(), 0.0);
    let sol = SdpSolution {
        objective: 0.0,
        dual_objective: 0.0,
        gram: vec![0.0; dim * dim],
        gram_dim: dim,
        linear_values,
        duals: Vec::new(),
        status: SolveStatus::Optimal,
        kkt_residuals: KktResiduals {
            primal: 0.0,
            dual: 0.0,
            gap: 0.0,
        },
        iterations: 0,
    };
    let ts = extract_triplets(&p, &sol).unwrap();
    assert!(ts.triplets().iter().all(|t| t.f == 0.0 && t.x.iter().chain(&t.g).all(|&v| v == 0.0)));
    assert_eq!(gram_rank(&sol), 0);
}

#[test]
fn invalid_problems() {
    let cls = class(-1.0, 1.0);
    let sched = StepSchedule::new(vec![1.0]).unwrap();
    assert!(PepProblem::new(cls, sched.clone(), 0.0, NumeratorKind::GapToLast).is_err());
    assert!(PepProblem::new(cls, sched, f64::NAN, NumeratorKind::GapToLast).is_err());
}

#[test]
fn unbounded_class_uses_limit_rate() {
    let unb = CurvatureClass::unbounded_below(1.0).unwrap();
    for steps in [vec![0.5], vec![1.0, 0.4, 0.8]] {
        let sched = StepSchedule::new(steps.clone()).unwrap();
        let p = PepProblem::new(unb, sched.clone(), 1.0, NumeratorKind::GapToOptimal).unwrap();
        let denominator = 1.0 + steps.iter().map(|h| 2.0 * h - h * h).sum::<f64>();
        assert_relative_eq!(solve(&p).value, 2.0 / denominator, max_relative = 1e-5);
    }
}
