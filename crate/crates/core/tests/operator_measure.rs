use kimura_core::families::OperatorFamily;
use kimura_core::geometry::{rho, CylinderVariant, ParabolicCylinder};
use kimura_core::measure::{
    integrate_fn, weight_tangent, weight_transverse, QuadratureSpec, WeightedMeasure,
};
use kimura_core::{Jet, KimuraOperator, Polynomial};
use proptest::prelude::*;

fn coupled(n: usize, m: usize, n0: usize, coupling: f64, shift: f64) -> KimuraOperator {
    let b = if n0 < n { 0.7 } else { 0.0 };
    OperatorFamily::Coupled {
        n,
        m,
        n0,
        b,
        coupling,
        shift,
        radius: 1.0,
    }
    .build()
    .unwrap()
}

fn shapes() -> impl Strategy<Value = (usize, usize, usize)> {
    prop_oneof![
        Just((1, 0, 1)),
        Just((1, 1, 1)),
        Just((2, 1, 1)),
        Just((2, 0, 2))
    ]
}

fn cubic(dim: usize, coeffs: &[f64]) -> Polynomial {
    // 1, z_k, z_k z_l (k <= l), z_0^3 with the given coefficients
    let mut p = Polynomial::constant(dim, coeffs[0]);
    let mut c = coeffs[1..].iter();
    for k in 0..dim {
        p = p + Polynomial::var(dim, k).scale(*c.next().unwrap());
        for l in k..dim {
            p = p + (&Polynomial::var(dim, k) * &Polynomial::var(dim, l)).scale(*c.next().unwrap());
        }
    }
    let x = Polynomial::var(dim, 0);
    p + (&(&x * &x) * &x).scale(*c.next().unwrap())
}

fn interior(dim: usize, s: &[f64]) -> Vec<f64> {
    (0..dim).map(|k| 0.05 + 0.9 * s[k]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conjugation_is_exact(
        (n, m, n0) in shapes(),
        coupling in -0.2f64..0.2,
        coeffs in prop::collection::vec(-2.0f64..2.0, 12),
        s in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let op = coupled(n, m, n0, coupling, -0.3);
        let dim = n + m;
        let mut u = cubic(dim, &coeffs);
        for i in 0..n0 {
            u = u.mul_var(i);
        }
        let probes = vec![interior(dim, &s)];
        prop_assert!(op.conjugation_residual(&u, &probes).unwrap() <= 1e-8);
    }

    #[test]
    fn h_transform_is_a_positive_weight_operator((n, m, n0) in shapes(), coupling in -0.2f64..0.2) {
        let op = coupled(n, m, n0, coupling, 0.0);
        let t = op.h_transform().unwrap();
        prop_assert_eq!(t.n0, 0);
        let rep = t.validate(7).unwrap();
        prop_assert!(rep.passed(), "{}", rep.summary());
        prop_assert!(t.beta0 >= 2.0_f64.min(op.beta0) - 1e-12);
    }

    #[test]
    fn apply_pointwise_is_linear(
        (n, m, n0) in shapes(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        cu in prop::collection::vec(-1.0f64..1.0, 12),
        cv in prop::collection::vec(-1.0f64..1.0, 12),
        s in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let op = coupled(n, m, n0, 0.1, -0.2);
        let dim = n + m;
        let z = interior(dim, &s);
        let (u, v) = (cubic(dim, &cu), cubic(dim, &cv));
        let w = u.scale(a) + v.scale(b);
        let lhs = op.apply_pointwise(&Jet::from_poly(&w, &z), &z).unwrap();
        let rhs = a * op.apply_pointwise(&Jet::from_poly(&u, &z), &z).unwrap()
            + b * op.apply_pointwise(&Jet::from_poly(&v, &z), &z).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn rho_is_a_metric(
        p in prop::collection::vec(0.0f64..1.0, 9),
    ) {
        let n = 2;
        let (a, b, c) = (&p[0..3], &p[3..6], &p[6..9]);
        let d = |x: &[f64], y: &[f64]| rho(x, y, n).unwrap();
        prop_assert_eq!(d(a, a), 0.0);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
    }

    #[test]
    fn cylinder_time_windows_are_disjoint(t in 0.05f64..2.0, frac in 0.01f64..0.99, x in 0.0f64..1.0) {
        let r = frac * t.sqrt() / 2.0;
        let base = ParabolicCylinder::centered(t, vec![x], r, 1).unwrap();
        let windows: Vec<(f64, f64)> = [CylinderVariant::Minus, CylinderVariant::Centered, CylinderVariant::Plus]
            .iter()
            .map(|&v| base.with_variant(v).time_interval())
            .collect();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let (a, b) = (windows[i], windows[j]);
                prop_assert!(a.1 <= b.0 || b.1 <= a.0, "{:?} overlaps {:?}", a, b);
            }
        }
    }

    #[test]
    fn density_factorizes((n, m, n0) in shapes(), s in prop::collection::vec(0.0f64..1.0, 3)) {
        let op = coupled(n, m, n0, 0.1, 0.0);
        let z = interior(n + m, &s);
        let dmu = WeightedMeasure::dmu(&op);
        let product = weight_tangent(&op, &z) * weight_transverse(&op, &z);
        prop_assert!((dmu.density(&z) - product).abs() <= 1e-12 * product.abs());
    }

    #[test]
    fn integration_is_linear_and_monotone(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.1f64..3.0) {
        let op = OperatorFamily::Model { n: 1, m: 0, n0: 0, b: 0.6, radius: 1.0 }.build().unwrap();
        let dmu = WeightedMeasure::dmu(&op);
        let spec = QuadratureSpec::default();
        let int = |f: &(dyn Fn(&[f64]) -> f64 + Sync)| integrate_fn(f, &dmu, &op.domain, &spec).unwrap().value().unwrap();
        let f = |z: &[f64]| (z[0] * 3.0).cos();
        let g = |z: &[f64]| z[0] * z[0] + 1.0;
        let lhs = int(&|z| a * f(z) + b * g(z));
        let rhs = a * int(&f) + b * int(&g);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!(int(&|z| g(z) + c) >= int(&g));
    }
}

#[test]
fn divergence_is_detected_only_without_the_tangent_factor() {
    let op = OperatorFamily::Model {
        n: 2,
        m: 1,
        n0: 1,
        b: 0.5,
        radius: 1.0,
    }
    .build()
    .unwrap();
    let dmu = WeightedMeasure::dmu(&op);
    let spec = QuadratureSpec::default();
    let bounded = integrate_fn(&|z: &[f64]| 1.0 + z[1], &dmu, &op.domain, &spec).unwrap();
    assert!(bounded.is_divergent());
    let vanishing =
        integrate_fn(&|z: &[f64]| z[0] * (1.0 + z[1]), &dmu, &op.domain, &spec).unwrap();
    assert!(!vanishing.is_divergent());
}

#[test]
fn validation_is_deterministic() {
    let op = coupled(2, 1, 1, 0.2, -0.2);
    assert_eq!(op.validate(9).unwrap(), op.validate(9).unwrap());
}
