use approx::assert_relative_eq;
use hypopep_core::gmlab::*;
use hypopep_core::interpolation::quadratic_bounds_check;
use hypopep_core::rates::{nstep_bound, step_threshold};
use hypopep_core::{CurvatureClass, Error, Kappa, NumeratorKind, StepSchedule};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
}

fn random_schedule(rng: &mut ChaCha8Rng, kappa: Kappa) -> StepSchedule {
    let hbar = step_threshold(kappa).unwrap().value;
    let n = rng.random_range(1..=25);
    StepSchedule::new((0..n).map(|_| hbar * rng.random_range(0.05..=1.0)).collect()).unwrap()
}

fn huber(rng: &mut ChaCha8Rng, kappa: f64) -> TestProblem {
    let a = random_matrix(rng, 8, 4);
    let b = random_vector(rng, 8, 3.0);
    let mu = huber_mu_for_kappa(&a, 0.5, kappa);
    let x0 = random_vector(rng, 4, 2.0).iter().copied().collect();
    make_huber_problem(a, b, 0.5, mu).unwrap().with_x0(x0)
}

fn logistic(rng: &mut ChaCha8Rng, weight: f64) -> TestProblem {
    let a = random_matrix(rng, 20, 5);
    let y = labels(rng, 20);
    let x0 = random_vector(rng, 5, 2.5).iter().copied().collect();
    make_logistic_l0_problem(a, y, 0.5, 0.2, weight).unwrap().with_x0(x0)
}

fn fd_check(tp: &TestProblem, x: &[f64]) {
    let g = tp.objective.grad(x);
    let eps = 1e-6;
    for i in 0..x.len() {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[i] += eps;
        dn[i] -= eps;
        let fd = (tp.objective.value(&up) - tp.objective.value(&dn)) / (2.0 * eps);
        assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "{}: {fd} vs {}", tp.name, g[i]);
    }
}

#[test]
fn quadratic_runs() {
    let tp = make_huber_problem(DMatrix::identity(1, 1), DVector::zeros(1), 10.0, 0.0)
        .unwrap()
        .with_x0(vec![1.0]);
    // Inside the quadratic zone this is x^2 / 20 with L = 1/10.
    let t = run_gm(&tp, &StepSchedule::constant(1.0, 1).unwrap()).unwrap();
    assert_eq!(t.iterates[1].x, vec![0.0]);
    assert_eq!(t.min_grad_sq, 0.0);
    for w in t.iterates.windows(2) {
        assert_eq!(w[1].x[0], w[0].x[0] - w[0].g[0] / tp.cls.l());
    }
    let bad = run_gm(&tp.with_x0(vec![1.0, 2.0]), &StepSchedule::constant(1.0, 1).unwrap());
    assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
}

#[test]
fn huber_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 5, 3);
    let tp = make_huber_problem(a.clone(), DVector::zeros(5), 0.7, 0.0).unwrap();
    // On the boundary |Ax - b| = delta both branches give the same gradient.
    let x = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let x = &x * (0.7 / (&a * &x).norm());
    let g = tp.objective.grad(x.as_slice());
    let smooth = a.transpose() * (&a * &x) / 0.7;
    let outer = a.transpose() * (&a * &x) / (&a * &x).norm();
    for i in 0..3 {
        assert_relative_eq!(g[i], smooth[i], max_relative = 1e-12);
        assert_relative_eq!(smooth[i], outer[i], max_relative = 1e-12);
    }

    for kappa in [-0.5, -2.0, -1e-3] {
        let mu = huber_mu_for_kappa(&a, 0.7, kappa);
        let tp = make_huber_problem(a.clone(), DVector::zeros(5), 0.7, mu).unwrap();
        assert_relative_eq!(tp.cls.kappa().value().unwrap(), kappa, max_relative = 1e-10);
    }
    assert!(matches!(
        make_huber_problem(a.clone(), DVector::zeros(5), 0.7, 0.1),
        Err(Error::PositiveMu(_))
    ));
}

#[test]
fn envelope_smoothness_and_class() {
    for (lambda, sigma) in [(2.0, 1.0), (0.5, 0.2), (1.0, 0.9)] {
        let e = Envelope::new(lambda, sigma).unwrap();
        let (inner, outer) = e.breakpoints();
        for b in [inner, outer, -inner, -outer] {
            let eps = 1e-9;
            assert!((e.value(b - eps) - e.value(b + eps)).abs() < 1e-8);
            assert!((e.grad(b - eps) - e.grad(b + eps)).abs() < 1e-8 / sigma);
        }
        let right = 1.0 - (inner - outer).powi(2) / (2.0 * sigma);
        assert!((inner * inner / (2.0 * (lambda - sigma)) - right).abs() < 1e-12);
        assert!((inner / (lambda - sigma) + (inner - outer) / sigma).abs() < 1e-12);

        let xs: Vec<f64> = (-80..=80)
            .map(|k| 1.3 * outer * k as f64 / 80.0)
            .chain([inner, outer, -inner, -outer])
            .collect();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = xs
            .iter()
            .flat_map(|&a| xs.iter().map(move |&b| (vec![a], vec![b])))
            .collect();
        let f = |x: &[f64]| e.value(x[0]);
        let g = |x: &[f64]| vec![e.grad(x[0])];
        assert!(quadratic_bounds_check(&f, &g, &e.class(), &pairs, 1e-12));
        let too_flat = CurvatureClass::general(-0.9 / sigma, 1.0 / (lambda - sigma)).unwrap();
        assert!(!quadratic_bounds_check(&f, &g, &too_flat, &pairs, 1e-12));

        // Odd gradient, with the middle branch pointing toward zero for x < 0.
        let mid = 0.5 * (inner + outer);
        assert_eq!(e.grad(-mid), -e.grad(mid));
        assert!(e.grad(mid) > 0.0);
    }
    assert!(matches!(Envelope::new(1.0, 2.0), Err(Error::BadEnvelopeParams { .. })));
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let k = -rng.random_range(0.0..3.0);
        let tp = huber(&mut rng, k);
        fd_check(&tp, &tp.x0);
        let x: Vec<f64> = tp.x0.iter().map(|v| 0.01 * v).collect();
        fd_check(&tp, &x);
        let w = rng.random_range(0.0..0.5);
        let tp = logistic(&mut rng, w);
        // Move away from the envelope breakpoints.
        let e = Envelope::new(0.5, 0.2).unwrap();
        let (inner, outer) = e.breakpoints();
        let x: Vec<f64> = tp
            .x0
            .iter()
            .map(|&v| {
                if (v.abs() - inner).abs() < 1e-4 || (v.abs() - outer).abs() < 1e-4 {
                    v + 1e-3
                } else {
                    v
                }
            })
            .collect();
        fd_check(&tp, &x);
    }
    let tp = logistic(&mut rng, 0.3);
    // Extreme margins stay finite.
    let big: Vec<f64> = vec![800.0; 5];
    assert!(tp.objective.value(&big).is_finite());
    assert!(tp.objective.grad(&big).iter().all(|v| v.is_finite()));
}

#[test]
fn declared_classes_hold_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..6 {
        let tp = if i % 2 == 0 {
            huber(&mut rng, -1.0)
        } else {
            logistic(&mut rng, 0.2)
        };
        let d = tp.x0.len();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..300)
            .map(|_| {
                let x: Vec<f64> = random_vector(&mut rng, d, 3.0).iter().copied().collect();
                let dir: Vec<f64> = random_vector(&mut rng, d, 1.0).iter().copied().collect();
                let t = 10f64.powf(rng.random_range(-3.0..0.5));
                let y = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                (x, y)
            })
            .collect();
        let f = |x: &[f64]| tp.objective.value(x);
        let g = |x: &[f64]| tp.objective.grad(x);
        assert!(quadratic_bounds_check(&f, &g, &tp.cls, &pairs, 1e-10), "{}", tp.name);
    }
}

#[test]
fn bound_respected_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = 0;
    for i in 0..60 {
        let tp = if i % 2 == 0 {
            let k = -rng.random_range(0.0..4.0);
            huber(&mut rng, k)
        } else {
            let w = rng.random_range(0.0..0.6);
            logistic(&mut rng, w)
        };
        let sched = random_schedule(&mut rng, tp.cls.kappa());
        let traj = run_gm(&tp, &sched).unwrap();
        let f0 = traj.iterates[0].f;
        let f_n = traj.iterates.last().unwrap().f;
        if f0 > f_n {
            let b = nstep_bound(&tp.cls, &sched, f0 - f_n, NumeratorKind::GapToLast).unwrap();
            assert!(traj.min_grad_sq <= b.bound * (1.0 + 1e-9), "case {i}");
        } else {
            // No decrease means the first gradient was already zero.
            assert_eq!(traj.min_grad_sq, 0.0);
        }
        if i % 2 == 1 {
            // Loss and envelope are nonnegative, so f_* >= 0.
            let b = nstep_bound(&tp.cls, &sched, f0, NumeratorKind::GapToOptimal).unwrap();
            assert!(traj.min_grad_sq <= b.bound, "case {i}");
        }
        cases += 1;
    }
    assert!(cases >= 50);
}

#[test]
fn certificates_on_logistic_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let tp = logistic(&mut rng, 0.4);
        let hbar = step_threshold(tp.cls.kappa()).unwrap().value;
        for h in [0.5, 1.0, hbar] {
            let sched = StepSchedule::constant(h, 50).unwrap();
            let traj = run_gm(&tp, &sched).unwrap();
            for w in traj.iterates.windows(2) {
                let r = one_step_certificate(&w[0], &w[1], h, &tp.cls, 1e-10);
                assert!(r.pass, "h={h}: {r:?}");
                assert_eq!(r.weighted_slack.is_some(), h >= 1.0);
            }
        }
    }
}

#[test]
fn convex_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tp = huber(&mut rng, 0.0);
    assert_eq!(tp.cls.mu(), Some(0.0));
    let traj = run_gm(&tp, &StepSchedule::constant(1.4, 30).unwrap()).unwrap();
    let r = convex_grad_monotonicity(&traj, &tp.cls, 1e-12);
    assert_eq!(r.status, CheckStatus::Pass);
    let norms = traj.grad_norms_sq();
    assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));

    let hypo = huber(&mut rng, -1.0);
    let traj = run_gm(&hypo, &StepSchedule::constant(1.4, 5).unwrap()).unwrap();
    assert_eq!(convex_grad_monotonicity(&traj, &hypo.cls, 1e-12).status, CheckStatus::NotApplicable);
}

#[test]
fn f_star_estimate_and_exports() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tp = logistic(&mut rng, 0.0);
    let est = estimate_f_star(&tp, 2000).unwrap();
    assert!(est >= 0.0 && est <= tp.objective.value(&tp.x0));

    let sched = StepSchedule::constant(1.0, 4).unwrap();
    let traj = run_gm(&tp, &sched).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&traj, &tp.cls, 1.0, NumeratorKind::GapToOptimal, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "iter,h,f,grad_norm_sq,min_grad_norm_sq_so_far,bound_so_far");
    assert_eq!(rows.len(), 6);
    assert!(rows[1].ends_with(','));
    assert_eq!(rows[5].split(',').nth(1), Some(""));
    let last_bound: f64 = rows[5].split(',').nth(5).unwrap().parse().unwrap();
    let b = nstep_bound(&tp.cls, &sched, 1.0, NumeratorKind::GapToOptimal).unwrap().bound;
    assert_eq!(last_bound, b);

    let a = read_matrix_csv("c1,c2\n1.5,2\n-3,4e-1\n".as_bytes()).unwrap();
    assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.5, 2.0, -3.0, 0.4]));
}
