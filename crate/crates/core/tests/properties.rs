//! Invariants over randomly drawn inputs.

mod oracles;

use proptest::prelude::*;

use scalesep_core::cell::{w_eta, CellConfig};
use scalesep_core::energy::{energy_en, energy_grad, EnergyParams};
use scalesep_core::field::{floor_lattice, truncate, unfolding_defect, Interface, LayerConvention};
use scalesep_core::geodesic::{geodesic_distance, ConformalMetric, GeodesicConfig};
use scalesep_core::grid::GridField;
use scalesep_core::potential::{eval_w, w_hom, PotentialSpec};
use scalesep_core::quadrature::QuadratureRule;

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn potential_is_nonnegative_periodic_and_vanishes_at_wells(
        amp in 0.0..0.95f64,
        y in prop::collection::vec(-2.0..2.0f64, 2),
        z in coords(2),
        shift in -3i32..3,
    ) {
        let spec = PotentialSpec::separable_cosine(amp, vec![-1.0, 0.5], vec![1.0, -0.5], 2);
        let w = eval_w(&spec, &y, &z).unwrap();
        prop_assert!(w >= 0.0);
        let y_shift: Vec<f64> = y.iter().map(|v| v + shift as f64).collect();
        let ws = eval_w(&spec, &y_shift, &z).unwrap();
        prop_assert!((w - ws).abs() <= 1e-10 * (1.0 + w));
        prop_assert_eq!(eval_w(&spec, &y, &spec.a).unwrap(), 0.0);
        prop_assert_eq!(eval_w(&spec, &y, &spec.b).unwrap(), 0.0);
    }

    #[test]
    // inside the quartic core; the tail beyond radius 2 is quadratic
    fn cell_average_ignores_the_oscillation(amp in 0.0..0.95f64, z in -2.0..2.0f64) {
        let quad = QuadratureRule::default();
        let osc = w_hom(&PotentialSpec::quartic_1d(amp), &[z], &quad).unwrap();
        prop_assert!((osc - (1.0 - z * z).powi(2)).abs() <= 1e-10 * (1.0 + osc));
    }

    #[test]
    fn truncation_is_bounded_and_fixes_the_ball(values in prop::collection::vec(-5.0..5.0f64, 2 * 9), r in 0.1..4.0f64) {
        let u = GridField::constant(vec![0.0], vec![1.0], vec![9], &[0.0, 0.0]).unwrap().with_values(2, values).unwrap();
        let t = truncate(&u, r).unwrap();
        for (a, b) in u.values().chunks(2).zip(t.values().chunks(2)) {
            let na = a[0].hypot(a[1]);
            let nb = b[0].hypot(b[1]);
            prop_assert!(nb <= r * (1.0 + 1e-14));
            if na <= r {
                prop_assert_eq!(a, b);
            } else {
                // same direction
                prop_assert!((a[0] * b[1] - a[1] * b[0]).abs() <= 1e-12 * na * nb);
            }
        }
    }

    #[test]
    fn lattice_rounding_is_a_nearest_point(x in coords(3)) {
        let k = floor_lattice(&x);
        let d = |k: &[i64]| x.iter().zip(k).map(|(x, k)| (x - *k as f64).powi(2)).sum::<f64>();
        prop_assert!(x.iter().zip(&k).all(|(x, k)| (x - *k as f64).abs() <= 0.5));
        for i in 0..3 {
            for s in [-1, 1] {
                let mut other = k.clone();
                other[i] += s;
                prop_assert!(d(&k) <= d(&other) + 1e-12);
            }
        }
    }

    #[test]
    fn signed_distance_is_one_lipschitz(n in coords(2), off in -1.0..1.0f64, x in coords(2), y in coords(2), c in coords(2), r in 0.1..2.0f64) {
        prop_assume!(n[0].hypot(n[1]) > 1e-3);
        for iface in [Interface::plane(n.clone(), off).unwrap(), Interface::circle(c.clone(), r).unwrap()] {
            let dx = iface.signed_distance(&x);
            let dy = iface.signed_distance(&y);
            prop_assert!((dx - dy).abs() <= (x[0] - y[0]).hypot(x[1] - y[1]) + 1e-12);
        }
    }
}

// Domain-sized computations: fewer cases.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_fields_unfold_with_only_the_layer_defect(c in coords(2), k in 2u32..5) {
        let delta = 1.0 / f64::from(2u32.pow(k));
        let a = [-1.0, 0.0];
        let u = GridField::constant(vec![0.0, 0.0], vec![1.0, 1.0], vec![65, 65], &c).unwrap();
        let d = unfolding_defect(&u, delta, 4, &a, LayerConvention::WellValue).unwrap();
        // full cells delta (j - 1/2, j + 1/2) inside (0, 1): j = 1 .. 1/delta - 1
        let covered = 1.0 - delta;
        let layer = 1.0 - covered * covered;
        let expected = (c[0] - a[0]).hypot(c[1] - a[1]) * layer.sqrt();
        prop_assert!((d - expected).abs() <= 1e-9 * (1.0 + expected), "{d} vs {expected}");
        let excluded = unfolding_defect(&u, delta, 4, &a, LayerConvention::Exclude).unwrap();
        prop_assert!(excluded.abs() <= 1e-12);
    }

    #[test]
    fn energy_gradient_matches_central_differences(
        values in prop::collection::vec(-1.5..1.5f64, 41),
        dir in prop::collection::vec(-1.0..1.0f64, 41),
        amp in 0.0..0.9f64,
    ) {
        let spec = PotentialSpec::quartic_1d(amp);
        let p = EnergyParams::new(0.2, 0.1);
        let u = GridField::constant(vec![0.0], vec![1.0], vec![41], &[0.0]).unwrap().with_values(1, values.clone()).unwrap();
        let g = energy_grad(&spec, &u, &p).unwrap();
        let analytic: f64 = g.values().iter().zip(&dir).map(|(g, d)| g * d).sum();
        let f = |x: &[f64]| energy_en(&spec, &u.with_values(1, x.to_vec()).unwrap(), &p).unwrap();
        let fd = oracles::central_difference(f, &values, &dir, 1e-6);
        prop_assert!((analytic - fd).abs() <= 1e-4 * analytic.abs().max(1e-2), "{analytic} vs {fd}");
    }

    #[test]
    fn energy_is_nonnegative_and_zero_on_wells(values in prop::collection::vec(-3.0..3.0f64, 33), well in prop::bool::ANY) {
        let spec = PotentialSpec::quartic_1d(0.5);
        let p = EnergyParams::new(0.1, 0.01);
        let t = GridField::constant(vec![0.0], vec![1.0], vec![401], &[0.0]).unwrap();
        let coarse = GridField::constant(vec![0.0], vec![1.0], vec![33], &[0.0]).unwrap().with_values(1, values).unwrap();
        let fine = GridField::from_fn(t.lo().to_vec(), t.hi().to_vec(), t.counts().to_vec(), 1, |x, o| coarse.interpolate(x, o)).unwrap();
        prop_assert!(energy_en(&spec, &fine, &p).unwrap() >= 0.0);
        let w = if well { 1.0 } else { -1.0 };
        prop_assert_eq!(energy_en(&spec, &t.with_values(1, vec![w; 401]).unwrap(), &p).unwrap(), 0.0);
    }

    #[test]
    fn cell_values_sit_between_zero_and_the_average(z in -1.6..1.6f64, eta in 0.02..0.25f64, amp in 0.0..0.9f64) {
        let spec = PotentialSpec::quartic_1d(amp);
        let cfg = CellConfig { restarts: 4, ..CellConfig::default().with_eta(eta) };
        let s = w_eta(&spec, &[z], &cfg).unwrap();
        prop_assert!(s.value >= 0.0);
        prop_assert!(s.value <= s.value_at_zero + 1e-8);
        prop_assert!(s.residuals.max() <= 1e-8);
        prop_assert!(s.product_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn flat_metric_distance_is_scaled_euclidean(p in coords(2), q in coords(2), c in 0.5..3.0f64) {
        let metric = ConformalMetric::constant(2, c);
        let cfg = GeodesicConfig { graph_nodes: Some(41), refine_levels: vec![8, 16], ..GeodesicConfig::default() };
        let d = geodesic_distance(&metric, &p, &q, &cfg).unwrap().distance;
        let back = geodesic_distance(&metric, &q, &p, &cfg).unwrap().distance;
        let exact = c * (p[0] - q[0]).hypot(p[1] - q[1]);
        prop_assert!((d - exact).abs() <= 1e-6 * (1.0 + exact), "{d} vs {exact}");
        prop_assert!((d - back).abs() <= 1e-6 * (1.0 + exact));
    }
}
