use approx::assert_relative_eq;
use hypopep_core::rates::*;
use hypopep_core::{CurvatureClass, Error, Kappa, NumeratorKind, Regime, StepSchedule};
use proptest::prelude::*;

fn class(kappa: f64, l: f64) -> CurvatureClass {
    CurvatureClass::from_kappa(Kappa::new(kappa).unwrap(), l).unwrap()
}

fn fin(k: f64) -> Kappa {
    Kappa::Finite(k)
}

/// Positive root of `k h^2 - 2h(1+k) + 3` on `(0, 2]`, by bisection.
fn threshold_oracle(k: f64) -> f64 {
    let q = |h: f64| k * h * h - 2.0 * h * (1.0 + k) + 3.0;
    let (mut a, mut b) = (0.0, 2.0);
    if q(b) >= 0.0 {
        return b;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if q(m) >= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Polynomial-numerator form of the long-step constant.
fn p_long_oracle(h: f64, k: f64) -> f64 {
    h * (k * h * h - 2.0 * h * (1.0 + k) + 4.0) / (2.0 - h * (1.0 + k))
}

fn p(h: f64, k: f64) -> f64 {
    one_step_p(h, fin(k)).unwrap().p
}

#[test]
fn threshold_examples() {
    assert_relative_eq!(step_threshold(fin(-1.0)).unwrap().value, 3f64.sqrt(), epsilon = 1e-15);
    assert_eq!(step_threshold(fin(0.0)).unwrap().value, 1.5);
    let t = step_threshold(fin(-2.0)).unwrap().value;
    assert_relative_eq!(t, (1.0 + 7f64.sqrt()) / 2.0, epsilon = 1e-15);
    assert_relative_eq!(t, threshold_oracle(-2.0), epsilon = 1e-14);
    let t = step_threshold(Kappa::NegInfinity).unwrap();
    assert_eq!(t.value, 2.0);
    assert!(t.open);
    assert!(matches!(step_threshold(fin(0.5)), Err(Error::PositiveKappa(_))));
}

#[test]
fn one_step_examples() {
    assert_relative_eq!(p(1.0, -1.0), 1.5, epsilon = 1e-15);
    assert_eq!(p(1.0, 0.0), 2.0);
    let s3 = 3f64.sqrt();
    assert_relative_eq!(p(s3, -1.0), s3 / 2.0, epsilon = 1e-14);
    assert_relative_eq!(p(s3, -1.0), 2.0 * s3 - 0.5 * s3 * s3 * s3, epsilon = 1e-14);
    assert_eq!(one_step_p(0.5, Kappa::NegInfinity).unwrap().p, 0.75);
    assert!(matches!(one_step_p(0.0, fin(-1.0)), Err(Error::StepNonPositive(_))));
    assert!(matches!(one_step_p(1.8, fin(-1.0)), Err(Error::StepAboveThreshold { .. })));
    assert!(one_step_p(2.0, Kappa::NegInfinity).is_err());
    assert_relative_eq!(one_step_p(1.0, fin(-1.0)).unwrap().scaled(2.0), 0.375);
}

#[test]
fn nstep_examples() {
    let opt = NumeratorKind::GapToOptimal;
    let one = StepSchedule::new(vec![1.0]).unwrap();
    let r = nstep_bound(&class(-1.0, 1.0), &one, 1.0, opt).unwrap();
    assert_relative_eq!(r.bound, 0.8, epsilon = 1e-15);
    assert_eq!(r.regime, Regime::Short);
    assert!(!r.is_conjectured());

    let two = StepSchedule::new(vec![1.0, 1.0]).unwrap();
    assert_relative_eq!(nstep_bound(&class(0.0, 1.0), &two, 1.0, opt).unwrap().bound, 0.4, epsilon = 1e-15);

    let half = StepSchedule::new(vec![0.5]).unwrap();
    let unb = CurvatureClass::unbounded_below(1.0).unwrap();
    assert_relative_eq!(nstep_bound(&unb, &half, 1.0, opt).unwrap().bound, 2.0 / 1.75, epsilon = 1e-15);

    let long = StepSchedule::new(vec![1.2, 0.5]).unwrap();
    let r = nstep_bound(&class(-1.0, 1.0), &long, 1.0, NumeratorKind::GapToLast).unwrap();
    assert_eq!(r.regime, Regime::Mid);
    assert_eq!(r.p.len(), 2);
    assert_relative_eq!(r.denominator, p(1.2, -1.0) + p(0.5, -1.0));

    let bad = StepSchedule::new(vec![0.5, 1.9]).unwrap();
    assert!(matches!(
        nstep_bound(&class(-1.0, 1.0), &bad, 1.0, opt),
        Err(Error::StepAboveThreshold { index: 1, .. })
    ));
    assert!(matches!(nstep_bound(&class(-1.0, 1.0), &one, 0.0, opt), Err(Error::InvalidDelta(_))));
}

#[test]
fn meta_combine_examples() {
    assert_eq!(meta_combine(&[0.5, 0.5], None, 1.0).unwrap(), 1.0);
    assert_eq!(meta_combine(&[1.0], Some(0.5), 3.0).unwrap(), 2.0);
    assert_eq!(meta_combine(&[1.0, 0.0], Some(0.0), 3.0).unwrap(), 3.0);
    assert_eq!(meta_combine(&[1.0, -1.0], None, 1.0), Err(Error::MixedSigns));
    assert_eq!(meta_combine(&[0.0], Some(0.0), 1.0), Err(Error::ZeroDenominator));
    assert_eq!(meta_combine(&[], None, 1.0), Err(Error::ZeroDenominator));
}

#[test]
fn optimal_step_examples() {
    let h = optimal_step(fin(-1.0), OptimalStepMode::Theorem).unwrap();
    assert_relative_eq!(h.h_star, 2.0 / 3f64.sqrt(), epsilon = 1e-14);
    assert_eq!(h.branch, StepBranch::CubicRoot);

    let h = optimal_step(fin(-0.05), OptimalStepMode::Theorem).unwrap();
    assert_eq!(h.branch, StepBranch::Threshold);
    assert_eq!(h.h_star, step_threshold(fin(-0.05)).unwrap().value);

    let h = optimal_step(fin(-0.5), OptimalStepMode::Theorem).unwrap();
    assert_eq!(h.branch, StepBranch::CubicRoot);
    assert!((h.h_star - 1.2589).abs() < 5e-5);
    let residual = 0.25 * h.h_star.powi(3) - 1.25 * h.h_star.powi(2) - 2.0 * h.h_star + 4.0;
    assert!(residual.abs() < 1e-12);

    assert_eq!(optimal_step(Kappa::NegInfinity, OptimalStepMode::Theorem).unwrap().h_star, 1.0);
    assert!(matches!(
        optimal_step(fin(0.0), OptimalStepMode::Asymptotic),
        Err(Error::KappaNotNegative(_))
    ));
    let a = optimal_step(fin(-2.0), OptimalStepMode::Asymptotic).unwrap();
    assert_eq!(a.branch, StepBranch::AsymptoticConjectured);
    assert!(a.h_star >= 1.0 && a.h_star < 2.0);
    assert!(optimal_step_cubic(a.h_star, -2.0).0.abs() < 1e-12);
}

#[test]
fn kappa_bar_joins_branches() {
    let kb = kappa_bar();
    assert!((kb + 0.1001).abs() < 5e-5);
    let hbar = step_threshold(fin(kb)).unwrap().value;
    assert!(optimal_step_cubic(hbar, kb).0.abs() < 1e-10);
    let h = optimal_step(fin(kb), OptimalStepMode::Theorem).unwrap().h_star;
    assert!((h - hbar).abs() < 1e-8);
    let below = optimal_step(fin(kb - 1e-9), OptimalStepMode::Theorem).unwrap().h_star;
    assert!((below - hbar).abs() < 1e-6);
}

#[test]
fn theorem_step_maximizes_p_on_grid() {
    for k in [-0.2, -0.5, -1.0, -2.0, -5.0, -0.05, 0.0] {
        let hbar = step_threshold(fin(k)).unwrap().value;
        let h_star = optimal_step(fin(k), OptimalStepMode::Theorem).unwrap().h_star;
        let best = p(h_star, k);
        let m = 20_000;
        let spacing = hbar / m as f64;
        let (grid_h, grid_p) = (1..=m)
            .map(|i| hbar * i as f64 / m as f64)
            .map(|h| (h, p(h, k)))
            .fold((0.0, f64::MIN), |acc, v| if v.1 > acc.1 { v } else { acc });
        assert!(best >= grid_p - 1e-12, "k={k}");
        assert!((grid_h - h_star).abs() <= spacing, "k={k}: {grid_h} vs {h_star}");
    }
}

#[test]
fn conjectured_examples() {
    let r = conjectured_bound_convex(1.8, 1, 1.0, 1.0, NumeratorKind::GapToOptimal).unwrap();
    assert_relative_eq!(r.bound, 1.28, epsilon = 1e-12);
    assert_eq!(r.regime, Regime::ConvexLarge);
    assert!(r.is_conjectured());

    let r = conjectured_bound_convex(1.9, 3, 1.0, 1.0, NumeratorKind::GapToLast).unwrap();
    assert_relative_eq!(r.denominator, 0.9f64.powi(-6) - 1.0, epsilon = 1e-12);
    assert!((r.denominator - 0.8816).abs() < 1e-4);

    // Just above 1.5 the linear branch is active and meets the proven rate.
    let n = 40;
    let r = conjectured_bound_convex(1.5 + 1e-9, n, 1.0, 1.0, NumeratorKind::GapToOptimal).unwrap();
    let proven = nstep_bound(
        &class(0.0, 1.0),
        &StepSchedule::constant(1.5, n).unwrap(),
        1.0,
        NumeratorKind::GapToOptimal,
    )
    .unwrap();
    assert_relative_eq!(r.bound, proven.bound, max_relative = 1e-8);

    assert!(matches!(
        conjectured_bound_convex(1.4, 2, 1.0, 1.0, NumeratorKind::GapToOptimal),
        Err(Error::StepOutOfRange { .. })
    ));
    assert!(matches!(
        conjectured_bound_convex(1.8, 0, 1.0, 1.0, NumeratorKind::GapToOptimal),
        Err(Error::ZeroIterations)
    ));
}

#[test]
fn third_regime_branches() {
    let cls = class(-0.5, 1.0);
    let h = 1.7;
    let slope = third_regime_slope(h, -0.5);
    // r chosen so the two branches coincide at N = 3.
    let geo = 0.7f64.powi(-6);
    let r_value = geo - 3.0 * slope;
    let b = conjectured_bound_third_regime(h, 3, &cls, 1.0, r_value, NumeratorKind::GapToOptimal).unwrap();
    assert_relative_eq!(b.denominator, geo, max_relative = 1e-14);
    assert_eq!(b.regime, Regime::Large);

    let n = 100_000;
    let b = conjectured_bound_third_regime(h, n, &cls, 1.0, 0.5, NumeratorKind::GapToOptimal).unwrap();
    assert_relative_eq!(b.bound, 2.0 / (n as f64 * slope), max_relative = 1e-4);

    assert!(conjectured_bound_third_regime(1.6, 3, &cls, 1.0, 1.0, NumeratorKind::GapToOptimal).is_err());
    let unb = CurvatureClass::unbounded_below(1.0).unwrap();
    assert!(conjectured_bound_third_regime(1.9, 3, &unb, 1.0, 1.0, NumeratorKind::GapToOptimal).is_err());
}

fn synthetic(cls: &CurvatureClass, h: f64, r: f64, kind: NumeratorKind, ns: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    ns.map(|n| (n, conjectured_bound_third_regime(h, n, cls, 1.0, r, kind).unwrap().bound))
        .collect()
}

#[test]
fn fit_r_round_trip() {
    let cls = class(-1.0, 1.0);
    for kind in [NumeratorKind::GapToOptimal, NumeratorKind::GapToLast] {
        let data = synthetic(&cls, 1.8, 0.7, kind, 1..=8);
        let fit = fit_r(&cls, 1.8, 1.0, kind, &data).unwrap();
        assert!((fit.r - 0.7).abs() < 1e-9, "{kind:?}: {}", fit.r);
        assert!((fit.free_slope - fit.slope).abs() < 1e-8 * fit.slope);
        assert!(fit.points.iter().all(|p| p.on_linear_branch));
        let pred = fit.predict(&cls, 1.8, 1.0, 12).unwrap();
        assert_relative_eq!(pred, synthetic(&cls, 1.8, 0.7, kind, 12..=12)[0].1, max_relative = 1e-12);

        // With a larger intercept N = 1 moves onto the geometric branch.
        let data = synthetic(&cls, 1.8, 1.0, kind, 1..=8);
        let fit = fit_r(&cls, 1.8, 1.0, kind, &data).unwrap();
        assert!((fit.r - 1.0).abs() < 1e-9);
        assert!(!fit.points[0].on_linear_branch);
        assert!(fit.points[1..].iter().all(|p| p.on_linear_branch));
    }
}

#[test]
fn fit_r_failures() {
    let cls = class(-1.0, 1.0);
    let data = synthetic(&cls, 1.8, 1.0, NumeratorKind::GapToOptimal, 1..=2);
    assert!(matches!(
        fit_r(&cls, 1.8, 1.0, NumeratorKind::GapToOptimal, &data),
        Err(Error::InsufficientData(_))
    ));
    // Slope of data far from the analytic one.
    let skewed: Vec<(usize, f64)> = (2..=8).map(|n| (n, 2.0 / (1.0 + 2.0 * n as f64))).collect();
    assert!(matches!(
        fit_r(&cls, 1.8, 1.0, NumeratorKind::GapToOptimal, &skewed),
        Err(Error::BranchMismatch { .. })
    ));
}

proptest! {
    #[test]
    fn branches_meet_at_one(k in -10.0f64..=0.0) {
        let below = 2.0 - k.abs() / (1.0 - k);
        let above = third_regime_slope(1.0, k);
        prop_assert!((p(1.0, k) - below).abs() < 1e-12);
        prop_assert!((p(1.0, k) - above).abs() < 1e-12);
        prop_assert!((p(1.0 - 1e-13, k) - p(1.0 + 1e-13, k)).abs() < 1e-11);
    }

    #[test]
    fn threshold_is_root(k in -1e4f64..0.0) {
        let t = step_threshold(fin(k)).unwrap().value;
        let q = k * t * t - 2.0 * t * (1.0 + k) + 3.0;
        prop_assert!(q.abs() < 1e-10 * (1.0 + k.abs()), "residual {q}");
        prop_assert!((t - threshold_oracle(k)).abs() < 1e-12);
    }

    #[test]
    fn long_step_forms_agree(k in -20.0f64..=0.0, frac in 0.0f64..=1.0) {
        let hbar = step_threshold(fin(k)).unwrap().value;
        let h = 1.0 + frac * (hbar - 1.0);
        prop_assert!((p(h, k) - p_long_oracle(h, k)).abs() < 1e-12);
        prop_assert!(p(h, k) > 0.0 || h == hbar && hbar == 2.0);
    }

    #[test]
    fn nonconvex_smooth_specialization(h in 1e-6f64..=1.7320508) {
        let expected = 2.0 * h - 0.5 * h * h * h.max(1.0);
        prop_assert!((p(h, -1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn nesterov_limit(h in 0.01f64..1.99) {
        let far = one_step_p(h, fin(-1e8));
        if let Ok(far) = far {
            prop_assert!((far.p - (2.0 * h - h * h)).abs() < 1e-6);
        }
        prop_assert_eq!(one_step_p(h, Kappa::NegInfinity).unwrap().p, 2.0 * h - h * h);
    }

    #[test]
    fn bound_monotone_in_kappa(
        steps in prop::collection::vec(0.01f64..=1.0, 1..8),
        k1 in -50.0f64..=0.0,
        k2 in -50.0f64..=0.0,
    ) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let sched = StepSchedule::new(steps).unwrap();
        for kind in [NumeratorKind::GapToLast, NumeratorKind::GapToOptimal] {
            let a = nstep_bound(&class(lo, 2.0), &sched, 1.5, kind).unwrap().bound;
            let b = nstep_bound(&class(hi, 2.0), &sched, 1.5, kind).unwrap().bound;
            prop_assert!(b <= a * (1.0 + 1e-14));
        }
    }

    #[test]
    fn meta_combine_reproduces_nstep(
        fracs in prop::collection::vec(0.01f64..=1.0, 1..10),
        k in -10.0f64..=0.0,
        l in 0.1f64..10.0,
        delta in 0.1f64..10.0,
    ) {
        let hbar = step_threshold(fin(k)).unwrap().value;
        let sched = StepSchedule::new(fracs.iter().map(|f| f * hbar).collect()).unwrap();
        let cls = class(k, l);
        let scaled: Vec<f64> = sched.steps().iter().map(|&h| p(h, k) / (2.0 * l)).collect();
        let opt = nstep_bound(&cls, &sched, delta, NumeratorKind::GapToOptimal).unwrap().bound;
        let via = meta_combine(&scaled, Some(1.0 / (2.0 * l)), delta).unwrap();
        prop_assert!((opt - via).abs() <= 1e-12 * opt);
        let last = nstep_bound(&cls, &sched, delta, NumeratorKind::GapToLast).unwrap().bound;
        let via = meta_combine(&scaled, None, delta).unwrap();
        prop_assert!((last - via).abs() <= 1e-12 * last);
    }

    #[test]
    fn theorem_step_is_admissible(k in -100.0f64..=0.0) {
        let s = optimal_step(fin(k), OptimalStepMode::Theorem).unwrap();
        let hbar = step_threshold(fin(k)).unwrap().value;
        prop_assert!(s.h_star >= 1.0 && s.h_star <= hbar);
        if s.branch == StepBranch::CubicRoot {
            prop_assert!(optimal_step_cubic(s.h_star, k).0.abs() <= 1e-12 * (1.0 + k * k));
        }
    }
}
