use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resus_core::patient::step_exact;
use resus_core::solver::{fd_gradient, Nlp};
use resus_core::{
    build_horizon_ocp, rhc_step, transcribe, PatientParams, PatientState, RhcConfig, RhcState,
};

fn random_point(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    // [state nodal values, state offset, control nodal values, control offset]
    (0..dim)
        .map(|i| {
            if i <= n {
                rng.random_range(-0.2..0.5)
            } else {
                rng.random_range(0.0..1.0)
            }
        })
        .collect()
}

fn rel_close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(scale)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = RhcConfig::default();
    let p = PatientParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for t_now in [0.0, 20.0, 45.0, 58.0] {
        let ocp = build_horizon_ocp(&cfg, &p, t_now, 0.1, 5.0).unwrap();
        let nlp = transcribe(&ocp, cfg.transcription.clone()).unwrap();
        for _ in 0..25 {
            let z = random_point(&mut rng, cfg.transcription.n_basis, nlp.dim());
            let g = nlp.objective_gradient(&z).unwrap();
            let fd = fd_gradient(|x| nlp.objective(x), &z, 1e-6).unwrap();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_close(*a, *b, scale), "t {t_now}: {a} vs {b}");
            }
            let jac = nlp.eq_jacobian(&z).unwrap();
            for r in 0..nlp.n_eq() {
                let row = fd_gradient(|x| nlp.eq_constraints(x)[r], &z, 1e-6).unwrap();
                let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-3;
                for (c, b) in row.iter().enumerate() {
                    assert!(rel_close(jac[(r, c)], *b, scale.max(1e-9)));
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
}

fn terminal_volume(cfg: &RhcConfig) -> f64 {
    let p = PatientParams::default();
    let mut s = PatientState::default();
    let mut st = RhcState::default();
    for k in 0..60 {
        let (step, next) = rhc_step(cfg, &p, &st, k as f64, s.volume_ml(&p), 0.0);
        st = next;
        s = step_exact(&p, &s, step.dose, 0.0, 1.0).unwrap();
    }
    s.volume_ml(&p)
}

#[test]
fn warm_start_does_not_change_the_outcome() {
    let warm = terminal_volume(&RhcConfig::default());
    let cold = terminal_volume(&RhcConfig {
        warm_start: false,
        ..Default::default()
    });
    assert!((warm - cold).abs() <= 0.005 * warm, "{warm} vs {cold}");
}

#[test]
fn finite_difference_path_gives_the_same_outcome() {
    let analytic = terminal_volume(&RhcConfig::default());
    let fd = terminal_volume(&RhcConfig {
        analytic_derivatives: false,
        ..Default::default()
    });
    assert!(
        (analytic - fd).abs() <= 0.005 * analytic,
        "{analytic} vs {fd}"
    );
}
