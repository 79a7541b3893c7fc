use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resus_core::controllers::limit_dose;
use resus_core::patient::{equilibrium, step_exact};
use resus_core::rbf::CenterLayout;
use resus_core::{
    lg_rule, pid_step, time_map, time_unmap, DoseLimitMode, KernelKind, NoiseModel, NoiseShape,
    PatientParams, PatientState, PidConfig, PidState, RbfBasis,
};

fn poly_integral(c: &[f64]) -> f64 {
    c.iter()
        .enumerate()
        .filter(|(k, _)| k % 2 == 0)
        .map(|(k, a)| 2.0 * a / (k + 1) as f64)
        .sum()
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

fn params() -> impl Strategy<Value = PatientParams> {
    (2000.0..6000.0f64, 0.01..1.0f64, 0.5..4.0f64, 40.0..120.0f64)
        .prop_map(|(v, k, a, w)| PatientParams::new(v, k, a, w).unwrap())
}

proptest! {
    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1(
        n in 1usize..=20,
        coeffs in prop::collection::vec(-1.0..1.0f64, 40),
    ) {
        let c = &coeffs[..2 * n];
        let q = lg_rule(n).unwrap();
        let got = q.integrate(|x| horner(c, x)).unwrap();
        prop_assert!((got - poly_integral(c)).abs() <= 1e-12);
    }

    #[test]
    fn gauss_legendre_weights_are_positive_and_sum_to_two(n in 1usize..=64) {
        let q = lg_rule(n).unwrap();
        prop_assert!(q.weights().iter().all(|w| *w > 0.0));
        prop_assert!((q.weights().iter().sum::<f64>() - 2.0).abs() < 1e-13);
        prop_assert!(q.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn time_map_round_trips(
        tau in -1.0..=1.0f64,
        t0 in -100.0..100.0f64,
        span in 1e-3..100.0f64,
    ) {
        let tf = t0 + span;
        let t = time_map(tau, t0, tf).unwrap();
        prop_assert!((t0..=tf).contains(&t));
        let back = time_unmap(t, t0, tf).unwrap();
        prop_assert!((back - tau).abs() <= 1e-12 * (1.0 + (t0.abs() + tf.abs()) / span));
    }

    #[test]
    fn interpolant_reproduces_node_values(
        n in 3usize..=12,
        eps in 2.0..4.0f64,
        values in prop::collection::vec(-10.0..10.0f64, 12),
    ) {
        let b = RbfBasis::with_layout(KernelKind::Gaussian, eps, n, CenterLayout::GaussLegendre).unwrap();
        let w = b.fit_interpolant(b.centers(), &values[..n]).unwrap();
        for (c, v) in b.centers().iter().zip(&values[..n]) {
            prop_assert!((b.eval(&w, *c) - v).abs() <= 1e-8 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn exact_steps_compose(
        p in params(),
        y0 in -0.3..0.5f64,
        u in 0.0..500.0f64,
        v in 0.0..50.0f64,
        dt1 in 0.01..5.0f64,
        dt2 in 0.01..5.0f64,
    ) {
        let s = PatientState { v_tilde: y0, t: 0.0 };
        let two = step_exact(&p, &step_exact(&p, &s, u, v, dt1).unwrap(), u, v, dt2).unwrap();
        let one = step_exact(&p, &s, u, v, dt1 + dt2).unwrap();
        prop_assert!((two.v_tilde - one.v_tilde).abs() <= 1e-12 * (1.0 + one.v_tilde.abs()));
    }

    #[test]
    fn equilibrium_is_a_fixed_point(p in params(), u in 0.0..500.0f64, v in 0.0..50.0f64) {
        let y = equilibrium(&p, u, v);
        let s = PatientState { v_tilde: y, t: 0.0 };
        let next = step_exact(&p, &s, u, v, 1.0).unwrap();
        prop_assert!((next.v_tilde - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }

    #[test]
    fn plant_is_linear_from_rest(
        p in params(),
        u1 in 0.0..300.0f64,
        u2 in 0.0..300.0f64,
        dt in 0.1..10.0f64,
    ) {
        let rest = PatientState::default();
        let a = step_exact(&p, &rest, u1, 0.0, dt).unwrap().v_tilde;
        let b = step_exact(&p, &rest, u2, 0.0, dt).unwrap().v_tilde;
        let ab = step_exact(&p, &rest, u1 + u2, 0.0, dt).unwrap().v_tilde;
        prop_assert!((ab - a - b).abs() <= 1e-12 * (1.0 + ab.abs()));
    }

    #[test]
    fn volume_rises_monotonically_below_equilibrium(
        p in params(),
        u in 1.0..500.0f64,
        steps in 1usize..50,
    ) {
        let mut s = PatientState::default();
        for _ in 0..steps {
            let next = step_exact(&p, &s, u, 0.0, 1.0).unwrap();
            prop_assert!(next.v_tilde >= s.v_tilde);
            prop_assert!(next.v_tilde <= equilibrium(&p, u, 0.0));
            s = next;
        }
    }

    #[test]
    fn noise_stays_within_amplitude(
        amplitude in 0.0..500.0f64,
        sigma in 1.0..500.0f64,
        gaussian in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let shape = if gaussian {
            NoiseShape::TruncatedGaussian { sigma_ml: sigma }
        } else {
            NoiseShape::Uniform
        };
        let n = NoiseModel { amplitude_ml: amplitude, shape };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..64 {
            prop_assert!(n.sample(&mut rng).abs() <= amplitude);
        }
    }

    #[test]
    fn pid_output_is_saturated(
        kp in 0.0..10.0f64,
        ki in 0.0..1.0f64,
        kd in 0.0..10.0f64,
        errors in prop::collection::vec(-5000.0..5000.0f64, 1..30),
    ) {
        let c = PidConfig::new(kp, ki, kd, 1750.0);
        let mut s = PidState::default();
        for e in errors {
            let (u, next) = pid_step(&c, &s, e, 1.0).unwrap();
            prop_assert!((0.0..=1750.0).contains(&u));
            s = next;
        }
    }

    #[test]
    fn limited_doses_respect_both_caps(
        dose in -1e4..1e4f64,
        infused in 0.0..2000.0f64,
        cumulative in any::<bool>(),
    ) {
        let mode = if cumulative { DoseLimitMode::Cumulative } else { DoseLimitMode::PerStep };
        let d = limit_dose(dose, 1750.0, mode, 1750.0, infused, 1.0);
        prop_assert!((0.0..=1750.0).contains(&d));
        if cumulative {
            prop_assert!(infused + d <= 1750.0_f64.max(infused) + 1e-9);
        }
    }
}
