use approx::assert_relative_eq;
use holderlab::covering::{constants, holder_seminorm};
use holderlab::equation::EquationSpec;
use holderlab::field::{Grid2D, ScalarField, VectorField};
use holderlab::gamma_metric::{GammaMetric, PointCloud};
use holderlab::harnack::khat;
use holderlab::subsolution::{build_psi, divergence_data, Sign};
use proptest::prelude::*;

fn gamma() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(-2.0),
        Just(-0.5),
        Just(0.5),
        Just(2.0),
        Just(8.0),
        -10.0..10.0f64
    ]
    .prop_filter("nonzero", |g| g.abs() > 1e-3)
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (0.0..5.0f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| [r * t.cos(), r * t.sin()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metric_axioms(g in gamma(), x in point(), y in point(), z in point()) {
        let m = GammaMetric::new(g).unwrap();
        let d = |a: &[f64; 2], b: &[f64; 2]| m.dist(a, b).unwrap();
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12 * (1.0 + d(&x, &z)));
        if x != y {
            prop_assert!(d(&x, &y) > 0.0);
        }
    }

    #[test]
    fn sandwich_bounds(g in gamma(), x in point(), y in point()) {
        let m = GammaMetric::new(g).unwrap();
        let d = m.dist(&x, &y).unwrap();
        let (lo, hi) = m.bounds(&x, &y).unwrap();
        prop_assert!(lo <= d * (1.0 + 1e-12) && d <= hi * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn greedy_cover_assigns_within_radius(
        g in gamma(),
        pts in prop::collection::vec(point(), 1..80),
        radius in 0.1..4.0f64,
    ) {
        let m = GammaMetric::new(g).unwrap();
        let cloud = PointCloud::from_points(&pts).unwrap();
        let cover = m.greedy_cover(&cloud, radius).unwrap();
        for (i, &c) in cover.assignment.iter().enumerate() {
            let center = cover.centers[c];
            prop_assert!(m.dist(cloud.point(i), cloud.point(center)).unwrap() <= radius);
        }
        prop_assert!(cover.len() <= cloud.len());
    }

    #[test]
    fn gradient_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0.5..4.0f64) {
        let g = Grid2D::unit_square(9).unwrap();
        let u = ScalarField::from_fn(g, |x| (k * x[0]).sin() * x[1]);
        let v = ScalarField::from_fn(g, |x| x[0] * x[0] * (k * x[1]).cos());
        let lhs = u.axpby(a, &v, b).unwrap().gradient();
        let (gu, gv) = (u.gradient(), v.gradient());
        for idx in 0..g.len() {
            let (l, p, q) = (lhs.value(idx), gu.value(idx), gv.value(idx));
            for c in 0..2 {
                assert_relative_eq!(l[c], a * p[c] + b * q[c], epsilon = 1e-11, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn v_identity_and_g_sign(c1 in -2.0..2.0f64, c2 in -2.0..2.0f64, axis in 0usize..2) {
        let g = Grid2D::unit_square(9).unwrap();
        let u = ScalarField::from_fn(g, |x| c1 * x[0] * x[1] + c2 * (x[0] - x[1]).powi(3));
        let pkg = build_psi(&u);
        let vp = pkg.v_field(axis, Sign::Plus).unwrap();
        let vm = pkg.v_field(axis, Sign::Minus).unwrap();
        let sq = pkg.psi.norm_field();
        for k in 0..g.len() {
            let s = sq.values()[k];
            prop_assert!((vp.values()[k] + vm.values()[k] - 2.0 * s * s).abs() <= 1e-12 * (1.0 + s * s));
        }
        prop_assert_eq!(pkg.gamma_star, 8.0 * pkg.m);
        let spec = EquationSpec::mms_quasilinear();
        for sign in Sign::BOTH {
            let d = divergence_data(&spec, &u, axis, pkg.gamma_star, sign).unwrap();
            prop_assert!(d.g_base.iter().all(|&x| x <= 0.0));
            prop_assert!(d.sigma_star >= 1.0 && d.nu >= 0.0);
        }
    }

    #[test]
    fn khat_grows_with_w(c in 0.1..3.0f64, bump in 0.0..2.0f64) {
        // Raising w away from the inner ball raises only the numerator.
        let g = Grid2D::unit_square(33).unwrap();
        let y = [0.5, 0.5];
        let base = ScalarField::constant(g, c);
        let raised = ScalarField::from_fn(g, |x| {
            let r = (x[0] - y[0]).hypot(x[1] - y[1]);
            c + if r > 0.08 { bump } else { 0.0 }
        });
        let a = khat(&base, y, 0.4, 0.25).unwrap();
        let b = khat(&raised, y, 0.4, 0.25).unwrap();
        prop_assert_eq!(a.infimum, b.infimum);
        prop_assert!(b.khat >= a.khat);
        prop_assert!(a.khat.is_finite() && a.khat >= 0.0);
    }

    #[test]
    fn seminorm_monotone_in_region_and_alpha(a1 in 0.2..1.0f64, a2 in 0.2..1.0f64, d in 0.05..0.3f64) {
        let g = Grid2D::unit_square(13).unwrap();
        let psi = VectorField::from_fn(g, |x| [(3.0 * x[0]).sin(), x[0] * x[1]]);
        let all: Vec<usize> = (0..g.len()).collect();
        let inner: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&k| g.distance_to_boundary(g.node_at(k)) >= d)
            .collect();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let s = |r: &[usize], a: f64| holder_seminorm(&psi, r, a, usize::MAX, 0).unwrap().value;
        prop_assert!(s(&inner, lo) <= s(&all, lo) * (1.0 + 1e-12));
        // Monotonicity in α needs pair distances ≤ 1.
        let small: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&k| {
                let p = g.node_at(k);
                p[0] <= 0.7 && p[1] <= 0.7
            })
            .collect();
        prop_assert!(s(&small, lo) <= s(&small, hi) * (1.0 + 1e-12));
    }

    #[test]
    fn constants_invariants(
        mu in 0.01..100.0f64,
        k in 0.0..1e4f64,
        nprime in 1usize..100_000,
        ndprime in 1usize..100_000,
    ) {
        let c = constants(2, mu, k, nprime, ndprime).unwrap();
        prop_assert!(c.violations().is_empty(), "{:?}", c.violations());
    }
}
