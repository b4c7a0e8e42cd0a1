use std::sync::Arc;

use kimura_core::families::{InitialData, OperatorFamily};
use kimura_core::geometry::ParabolicCylinder;
use kimura_core::grid::{Field, TensorGrid};
use kimura_core::harness::{
    carleson_constant, elliptic_harnack, envelope_bound, hopf_oleinik_constant, quotient_bounds,
    refinement_verdict, vanishing_exponent, Verdict,
};
use kimura_core::oracles::{sample_em, sample_model_exact, Diffusion1d};
use kimura_core::solver::{solve_ivp, Scheme, Trajectory};
use kimura_core::stats::ks_distance;
use proptest::prelude::*;

fn zero_weight_trajectory(cells: usize, data: &InitialData) -> Trajectory {
    let op = OperatorFamily::Model {
        n: 1,
        m: 0,
        n0: 1,
        b: 0.0,
        radius: 1.0,
    }
    .build()
    .unwrap();
    let g = Arc::new(TensorGrid::graded(op.domain.clone(), &[cells], 10).unwrap());
    let domain = op.domain.clone();
    let u0 = Field::from_fn(g.clone(), |z| data.eval(&domain, z)).unwrap();
    solve_ivp(&op, g, &u0, 0.6, 0.005, Scheme::CrankNicolson, 1).unwrap()
}

fn scaled(traj: &Trajectory, s: f64) -> Trajectory {
    let mut t = traj.clone();
    t.fields
        .iter_mut()
        .for_each(|f| f.values.iter_mut().for_each(|v| *v *= s));
    t
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_seeds_give_identical_ensembles(seed in any::<u64>(), b in 0.0f64..2.0) {
        let a1 = sample_model_exact(b, 0.4, 0.3, 5000, seed).unwrap();
        let a2 = sample_model_exact(b, 0.4, 0.3, 5000, seed).unwrap();
        prop_assert_eq!(&a1.terminal, &a2.terminal);
        prop_assert_eq!(&a1.absorbed, &a2.absorbed);
        let e1 = sample_em(&Diffusion1d::model(b), 0.4, 0.3, 0.01, 5000, seed).unwrap();
        let e2 = sample_em(&Diffusion1d::model(b), 0.4, 0.3, 0.01, 5000, seed).unwrap();
        prop_assert_eq!(&e1.terminal, &e2.terminal);
    }

    #[test]
    fn constants_are_scale_invariant(s in 1e-3f64..1e3, tilt in -0.5f64..2.0) {
        let t1 = zero_weight_trajectory(48, &InitialData::Profile { tilt });
        let t2 = zero_weight_trajectory(48, &InitialData::BesselMode);
        let cyl = ParabolicCylinder::centered(0.3, vec![0.0], 0.2, 1).unwrap();
        let st = scaled(&t1, s);
        prop_assert!(rel(carleson_constant(&t1, &cyl, 1).unwrap().value, carleson_constant(&st, &cyl, 1).unwrap().value) <= 1e-12);
        prop_assert!(rel(hopf_oleinik_constant(&t1, &cyl, 1).unwrap().value, hopf_oleinik_constant(&st, &cyl, 1).unwrap().value) <= 1e-12);
        let (q, qs) = (quotient_bounds(&t1, &t2, &cyl, 1).unwrap(), quotient_bounds(&st, &t2, &cyl, 1).unwrap());
        prop_assert!(rel(q.sup_form, qs.sup_form) <= 1e-12 && rel(q.inf_form, qs.inf_form) <= 1e-12);
        prop_assert!(q.consistent);
        let region = t1.grid.domain.shrink(0.5);
        let (h, hs) = (elliptic_harnack(&t1, 1, 0.3, 0.2, &region).unwrap(), elliptic_harnack(&st, 1, 0.3, 0.2, &region).unwrap());
        prop_assert!(rel(h.ratio, hs.ratio) <= 1e-12);
    }

    #[test]
    fn carleson_dominates_hopf(tilt in -0.5f64..2.0, r in 0.05f64..0.25) {
        let t1 = zero_weight_trajectory(48, &InitialData::Profile { tilt });
        let cyl = ParabolicCylinder::centered(0.4, vec![0.0], r, 1).unwrap();
        let c = carleson_constant(&t1, &cyl, 1).unwrap();
        let h = hopf_oleinik_constant(&t1, &cyl, 1).unwrap();
        prop_assert!(c.numerator >= h.numerator);
        prop_assert!(h.value > 0.0);
    }

    #[test]
    fn tangent_vanishing_rate_is_one(tilt in -0.5f64..2.0) {
        let traj = zero_weight_trajectory(128, &InitialData::Profile { tilt });
        let fit = vanishing_exponent(traj.nearest(0.5), &[0], &[0.0], (1e-3, 1e-2)).unwrap();
        prop_assert!((0.9..=1.1).contains(&fit.slope), "{}", fit.slope);
    }
}

#[test]
fn envelope_bound_is_homogeneous_and_grows_with_p() {
    let op = OperatorFamily::Model {
        n: 1,
        m: 0,
        n0: 1,
        b: 0.0,
        radius: 1.0,
    }
    .build()
    .unwrap();
    let t = zero_weight_trajectory(48, &InitialData::Profile { tilt: 0.5 });
    let e = |traj: &Trajectory, p: f64| {
        envelope_bound(traj, &op, &traj.fields[0], 0.1, 0.5, 0.75, p).unwrap()
    };
    let (a, b) = (e(&t, 4.0), e(&scaled(&t, 20.0), 4.0));
    assert!(a.constant > 0.0 && a.constant.is_finite() && !a.divergent);
    assert!(rel(a.constant, b.constant) <= 1e-12);
    // W_r0 shrinks as p grows when r0 < 1
    assert!(e(&t, 3.0).constant < e(&t, 6.0).constant);
    assert!(envelope_bound(&t, &op, &t.fields[0], 0.1, 0.8, 0.75, 4.0).is_err());
}

#[test]
fn exact_moments_within_three_standard_errors() {
    for &(b, x0, t) in &[(0.5, 0.3, 0.5), (0.0, 1.0, 0.2), (2.0, 0.1, 1.0)] {
        let e = sample_model_exact(b, x0, t, 50_000, 11).unwrap();
        let (m1, se1) = e.expectation(|x| x);
        let (m2, se2) = e.expectation(|x| x * x);
        let mean = x0 + b * t;
        let second = mean * mean + 2.0 * x0 * t + b * t * t;
        assert!((m1 - mean).abs() <= 3.0 * se1, "mean {m1} vs {mean}");
        assert!(
            (m2 - second).abs() <= 3.0 * se2,
            "second moment {m2} vs {second}"
        );
    }
}

#[test]
fn em_agreement_improves_with_smaller_steps() {
    let exact = sample_model_exact(0.5, 0.3, 0.5, 40_000, 1).unwrap();
    let ks = |dt: f64| {
        let em = sample_em(&Diffusion1d::model(0.5), 0.3, 0.5, dt, 40_000, 2).unwrap();
        ks_distance(&mut exact.terminal.clone(), &mut em.terminal.clone())
    };
    let (coarse, fine) = (ks(0.1), ks(0.025));
    assert!(fine < coarse, "{fine} !< {coarse}");
}

#[test]
fn verdict_rules() {
    assert_eq!(refinement_verdict(&[1.0], 0.2).0, Verdict::Insufficient);
    assert_eq!(refinement_verdict(&[1.0, 1.1], 0.2).0, Verdict::Pass);
    assert_eq!(
        refinement_verdict(&[1.0, f64::INFINITY], 0.2).0,
        Verdict::Fail
    );
    // monotone growth across three grids
    assert_eq!(refinement_verdict(&[1.0, 1.3, 1.7], 0.2).0, Verdict::Fail);
    assert_eq!(refinement_verdict(&[1.0, 1.05, 1.1], 0.2).0, Verdict::Pass);
}
