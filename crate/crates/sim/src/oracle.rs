//! Built-in analytic checks run by `resus oracle`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resus_core::patient::{simulate, simulate_rk4, step_exact};
use resus_core::rbf::CenterLayout;
use resus_core::solver::FnNlp;
use resus_core::{
    lg_rule, solve, transcribe, KernelKind, OcpProblem, PatientParams, PatientState, RbfBasis,
    Schedule, SolveStatus, SolverOptions, TimeWindow, TranscriptionConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> OracleCheck {
    OracleCheck {
        name,
        passed,
        detail,
    }
}

pub fn run_oracles() -> Vec<OracleCheck> {
    vec![
        quadrature_degree(),
        rbf_interpolation(),
        double_integrator(),
        decaying_lq(),
        plant_exactness(),
        plant_reference_value(),
        solver_examples(),
    ]
}

fn quadrature_degree() -> OracleCheck {
    let mut worst = 0.0f64;
    for n in [2, 5, 10, 20] {
        let q = lg_rule(n).unwrap();
        for k in 0..2 * n {
            let exact = if k % 2 == 0 {
                2.0 / (k + 1) as f64
            } else {
                0.0
            };
            let got = q.integrate(|x| x.powi(k as i32)).unwrap();
            worst = worst.max((got - exact).abs());
        }
    }
    check(
        "quadrature degree 2n-1",
        worst <= 1e-12,
        format!("max error {worst:e}"),
    )
}

fn rbf_interpolation() -> OracleCheck {
    let f = |t: f64| (std::f64::consts::PI * t).sin();
    let basis =
        RbfBasis::with_layout(KernelKind::Gaussian, 2.0, 15, CenterLayout::GaussLegendre).unwrap();
    let values: Vec<f64> = basis.centers().iter().map(|&c| f(c)).collect();
    let Ok(w) = basis.fit_interpolant(basis.centers(), &values) else {
        return check("rbf interpolation", false, "fit failed".into());
    };
    let nodes = basis
        .centers()
        .iter()
        .map(|&c| (basis.eval(&w, c) - f(c)).abs())
        .fold(0.0, f64::max);
    let off = (0..=100)
        .map(|k| -1.0 + 0.02 * k as f64)
        .map(|t| (basis.eval(&w, t) - f(t)).abs())
        .fold(0.0, f64::max);
    check(
        "rbf interpolation",
        nodes <= 1e-10 && off <= 1e-4,
        format!("node error {nodes:e}, off-node error {off:e}"),
    )
}

fn lq_check(
    name: &'static str,
    p: &OcpProblem,
    cfg: TranscriptionConfig,
    x_end: &[f64],
    u_star: impl Fn(f64) -> f64,
    j_star: f64,
) -> OracleCheck {
    let nlp = match transcribe(p, cfg) {
        Ok(n) => n,
        Err(e) => return check(name, false, e.to_string()),
    };
    let x0 = vec![0.0; p.n_states()];
    let z0 = nlp.initial_guess(&x0, x_end, &[0.0]);
    let r = match solve(&nlp, &z0, &SolverOptions::default()) {
        Ok(r) => r,
        Err(e) => return check(name, false, e.to_string()),
    };
    let t = nlp.extract_trajectory(&r.z_star).unwrap();
    let u_err = (0..=100)
        .map(|k| k as f64 / 100.0)
        .map(|s| (t.control_at_time(s).unwrap()[0] - u_star(s)).abs())
        .fold(0.0, f64::max);
    let j_err = (r.objective_value - j_star).abs();
    check(
        name,
        r.status == SolveStatus::Converged && u_err <= 1e-3 && j_err <= 1e-4,
        format!(
            "status {}, max |u - u*| {u_err:e}, |J - J*| {j_err:e}",
            r.status.as_str()
        ),
    )
}

fn double_integrator() -> OracleCheck {
    let p = OcpProblem::new(2, 1, TimeWindow::new(0.0, 1.0).unwrap(), |x, u| {
        vec![x[1], u[0]]
    })
    .with_lagrange(|_, u| 0.5 * u[0] * u[0])
    .with_boundary(4, |x0, xf, _| vec![x0[0], x0[1], xf[0] - 1.0, xf[1]]);
    let cfg = TranscriptionConfig {
        n_basis: 16,
        n_quadrature: Some(21),
        ..Default::default()
    };
    lq_check(
        "double integrator",
        &p,
        cfg,
        &[1.0, 0.0],
        |t| 6.0 - 12.0 * t,
        6.0,
    )
}

/// x' = -x + u, x(0) = 0, x(1) = 1, minimum energy: u = e^t / sinh 1.
fn decaying_lq() -> OracleCheck {
    let p = OcpProblem::new(1, 1, TimeWindow::new(0.0, 1.0).unwrap(), |x, u| {
        vec![-x[0] + u[0]]
    })
    .with_lagrange(|_, u| 0.5 * u[0] * u[0])
    .with_boundary(2, |x0, xf, _| vec![x0[0], xf[0] - 1.0]);
    let a = 1.0 / 1.0f64.sinh();
    let cfg = TranscriptionConfig {
        n_basis: 14,
        ..Default::default()
    };
    lq_check(
        "first-order minimum energy",
        &p,
        cfg,
        &[1.0],
        |t| a * t.exp(),
        a * a * (2.0f64.exp() - 1.0) / 4.0,
    )
}

fn plant_exactness() -> OracleCheck {
    let p = PatientParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut steps = |hi: f64| {
        let vals: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..hi)).collect();
        Schedule::from_steps(0.0, 1.0, &vals).unwrap()
    };
    let (u, v) = (steps(300.0), steps(20.0));
    let exact = simulate(&p, PatientState::default(), &u, &v, 1.0, 60.0).unwrap();
    let rk4 = simulate_rk4(&p, PatientState::default(), &u, &v, 0.01, 60.0).unwrap();
    let worst = exact
        .iter()
        .enumerate()
        .map(|(k, s)| (s.v_tilde - rk4[100 * k].v_tilde).abs())
        .fold(0.0, f64::max);
    check(
        "exact plant vs RK4",
        worst <= 1e-7,
        format!("max difference {worst:e}"),
    )
}

fn plant_reference_value() -> OracleCheck {
    let p = PatientParams::new(3940.0, 0.1, 2.0, 70.0).unwrap();
    let y = step_exact(&p, &PatientState::default(), 100.0, 0.0, 1.0)
        .unwrap()
        .v_tilde;
    check(
        "plant closed form",
        (y - 0.0249580).abs() <= 1e-6,
        format!("y(1) = {y:.7}"),
    )
}

fn solver_examples() -> OracleCheck {
    let opts = SolverOptions::default();
    let bowl = FnNlp::new(1, |z| (z[0] - 3.0).powi(2));
    let eq = FnNlp::new(2, |z| z[0] * z[0] + z[1] * z[1]).with_eq(1, |z| vec![z[0] + z[1] - 1.0]);
    let ineq = FnNlp::new(1, |z| z[0] * z[0]).with_ineq(1, |z| vec![1.0 - z[0]]);
    let cases: [(&FnNlp, &[f64], &[f64]); 3] = [
        (&bowl, &[0.0], &[3.0]),
        (&eq, &[0.0, 0.0], &[0.5, 0.5]),
        (&ineq, &[3.0], &[1.0]),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (nlp, z0, want) in cases {
        match solve(nlp, z0, &opts) {
            Ok(r) => {
                let err = r
                    .z_star
                    .iter()
                    .zip(want)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                ok &= r.status == SolveStatus::Converged
                    && err <= 1e-6
                    && r.kkt.stationarity <= 1e-6
                    && r.kkt.eq_violation <= 1e-6
                    && r.kkt.ineq_violation <= 1e-6;
                detail.push(format!("{} ({err:.1e})", r.status.as_str()));
            }
            Err(e) => {
                ok = false;
                detail.push(e.to_string());
            }
        }
    }
    check("solver KKT examples", ok, detail.join(", "))
}
