use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use wdiff::functional::{Moments, TestFunctional, TrigPoly};
use wdiff::geometry::{
    circular_wasserstein2, density_to_quantile, quantile_to_density, torus_distance, QuantileState, TorusDensity,
    TWO_PI,
};
use wdiff::interp::TrigInterpolant;
use wdiff::noise::{CommonNoise, FourierProfile, NoiseKey};
use wdiff::sde::evolve;

fn bumpy(n: usize, a: f64, b: f64, shift: f64) -> TorusDensity {
    TorusDensity::from_fn(n, |x| 1.0 + a * (x - shift).cos() + b * (2.0 * x).sin()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn torus_distance_is_a_symmetric_periodic_metric(x in -20.0..20.0f64, y in -20.0..20.0f64, m in -3i32..3) {
        let d = torus_distance(x, y);
        prop_assert!((0.0..=PI).contains(&d));
        assert_abs_diff_eq!(d, torus_distance(y, x), epsilon = 1e-12);
        assert_abs_diff_eq!(d, torus_distance(x + TWO_PI * m as f64, y), epsilon = 1e-12);
    }

    #[test]
    fn trig_interpolant_reproduces_low_degree_polynomials(c in prop::collection::vec(-1.0..1.0f64, 7), x in 0.0..1.0f64) {
        let f = |u: f64| {
            let w = TWO_PI * u;
            c[0] + c[1] * w.cos() + c[2] * w.sin() + c[3] * (2.0 * w).cos() + c[4] * (2.0 * w).sin()
                + c[5] * (3.0 * w).cos() + c[6] * (3.0 * w).sin()
        };
        let samples: Vec<f64> = (0..16).map(|j| f(j as f64 / 16.0)).collect();
        let ti = TrigInterpolant::from_samples(&samples, 1.0);
        assert_abs_diff_eq!(ti.eval(x), f(x), epsilon = 1e-12);
        assert_abs_diff_eq!(ti.mean(), c[0], epsilon = 1e-14);
    }

    #[test]
    fn quantile_density_round_trip(amp in -0.6..0.6f64) {
        let g = QuantileState::sine_perturbed(128, amp).unwrap();
        let p = quantile_to_density(&g, 256).unwrap();
        let back = density_to_quantile(&p, g.values()[0], 128).unwrap();
        for (a, b) in g.values().iter().zip(back.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn wasserstein_is_symmetric_and_bounded_by_rotation(a in 0.0..0.8f64, b in -0.1..0.1f64, s in -1.0..1.0f64) {
        let p = bumpy(128, a, b, 0.0);
        let q = bumpy(128, a, b, s);
        assert_abs_diff_eq!(circular_wasserstein2(&p, &p).unwrap(), 0.0, epsilon = 1e-6);
        let pq = circular_wasserstein2(&p, &q).unwrap();
        assert_abs_diff_eq!(pq, circular_wasserstein2(&q, &p).unwrap(), epsilon = 1e-6);
        prop_assert!(pq <= s.abs() + 1e-6, "W2 {pq} exceeds shift {s}");
    }

    #[test]
    fn functional_depends_on_positions_mod_two_pi(xs in prop::collection::vec(-10.0..10.0f64, 1..40), m in -2i32..3) {
        let phi = TestFunctional::interaction(TrigPoly::new(vec![0.0, 1.0, 0.3], vec![0.0; 3]).unwrap()).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + TWO_PI * m as f64).collect();
        assert_abs_diff_eq!(phi.value(&xs), phi.value(&shifted), epsilon = 1e-10);
        let mom = Moments::of(&xs, phi.degree());
        assert_abs_diff_eq!(phi.value_m(&mom), phi.value(&xs), epsilon = 1e-12);
    }

    #[test]
    fn noise_is_a_pure_function_of_its_key(seed in any::<u64>(), w in 0u64..1000) {
        let a = CommonNoise::sample(NoiseKey::new(seed, w), 4, 20, 1e-2).unwrap();
        let b = CommonNoise::sample(NoiseKey::new(seed, w), 4, 20, 1e-2).unwrap();
        let c = CommonNoise::sample(NoiseKey::new(seed, w + 1), 4, 20, 1e-2).unwrap();
        prop_assert_eq!(a.dw_re(), b.dw_re());
        prop_assert_eq!(a.dw_im(), b.dw_im());
        prop_assert_ne!(a.dw_re(), c.dw_re());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn particles_stay_ordered_and_periodic(seed in any::<u64>(), amp in -0.5..0.5f64, alpha in 2.5..5.0f64) {
        let n_u = 32;
        let g = QuantileState::sine_perturbed(n_u, amp).unwrap();
        let profile = FourierProfile::build(alpha, 1.0, 8).unwrap();
        let noise = Arc::new(CommonNoise::sample(NoiseKey::new(seed, 0), 8, 200, 1e-3).unwrap());
        let path = evolve(&g, &profile, &noise.with_beta(0), 1).unwrap();
        for n in [0, 100, 200] {
            let x = path.x_at(n);
            prop_assert_eq!(x.len(), n_u + 1);
            assert_abs_diff_eq!(x[n_u] - x[0], TWO_PI, epsilon = 1e-12);
            prop_assert!(x.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(path.d1_at(n).iter().all(|d| *d > 0.0));
        }
    }
}
