//! Lumped blood-volume response to fluid infusion and hemorrhage.
//!
//! The state is the normalized volume change `y = (V_B - V_B0) / V_B0`:
//!
//! ```text
//! dy/dt = c (u - v) - K y,    c = 1/V_B0 + K / (V_B0 (1 + alpha))
//! ```
//!
//! with infusion rate `u` and hemorrhage rate `v` in mL/min.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatientError {
    #[error("invalid patient parameter: {0}")]
    InvalidParams(&'static str),
    #[error("{0} rate must be non-negative and finite")]
    InvalidRate(&'static str),
    #[error("time step must be positive and finite")]
    InvalidStep,
    #[error("blood volume fell below zero at t = {t}")]
    VolumeExhausted { t: f64 },
    #[error("schedule does not cover t = {t}")]
    ScheduleGap { t: f64 },
    #[error("invalid schedule segment [{start}, {end})")]
    InvalidSegment { start: f64, end: f64 },
    #[error("noise amplitude must be non-negative and finite")]
    InvalidNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PatientParams {
    /// Initial (baseline) blood volume, mL.
    pub v_b0: f64,
    /// Fluid shift rate `K`, 1/min.
    pub k_shift: f64,
    pub alpha: f64,
    pub weight_kg: f64,
}

impl Default for PatientParams {
    fn default() -> Self {
        Self {
            v_b0: 3940.0,
            k_shift: 0.1,
            alpha: 2.0,
            weight_kg: 70.0,
        }
    }
}

impl PatientParams {
    pub fn new(v_b0: f64, k_shift: f64, alpha: f64, weight_kg: f64) -> Result<Self, PatientError> {
        let p = Self {
            v_b0,
            k_shift,
            alpha,
            weight_kg,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PatientError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.v_b0) {
            return Err(PatientError::InvalidParams("v_b0 must be positive"));
        }
        if !pos(self.k_shift) {
            return Err(PatientError::InvalidParams("k_shift must be positive"));
        }
        if !(self.alpha.is_finite() && self.alpha > -1.0) {
            return Err(PatientError::InvalidParams("alpha must exceed -1"));
        }
        if !pos(self.weight_kg) {
            return Err(PatientError::InvalidParams("weight_kg must be positive"));
        }
        Ok(())
    }

    /// `c = 1/V_B0 + K / (V_B0 (1 + alpha))`, 1/mL.
    pub fn input_gain(&self) -> f64 {
        1.0 / self.v_b0 + self.k_shift / (self.v_b0 * (1.0 + self.alpha))
    }

    /// Normalized state of an absolute volume.
    pub fn normalize(&self, volume_ml: f64) -> f64 {
        (volume_ml - self.v_b0) / self.v_b0
    }

    pub fn volume_ml(&self, v_tilde: f64) -> f64 {
        self.v_b0 * (1.0 + v_tilde)
    }

    /// Constant net infusion rate `u - v` that holds `y` at `v_tilde`.
    pub fn holding_net_rate(&self, v_tilde: f64) -> f64 {
        self.k_shift * v_tilde / self.input_gain()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PatientState {
    pub v_tilde: f64,
    pub t: f64,
}

impl PatientState {
    pub fn volume_ml(&self, params: &PatientParams) -> f64 {
        params.volume_ml(self.v_tilde)
    }
}

fn check_rates(u: f64, v: f64) -> Result<(), PatientError> {
    if !(u.is_finite() && u >= 0.0) {
        return Err(PatientError::InvalidRate("infusion"));
    }
    if !(v.is_finite() && v >= 0.0) {
        return Err(PatientError::InvalidRate("hemorrhage"));
    }
    Ok(())
}

/// `dy/dt` without argument checks.
#[inline]
fn slope(params: &PatientParams, y: f64, u: f64, v: f64) -> f64 {
    let net = u - v;
    net / params.v_b0 + params.k_shift * net / (params.v_b0 * (1.0 + params.alpha))
        - params.k_shift * y
}

/// `dy/dt`, 1/min.
pub fn rhs(params: &PatientParams, v_tilde: f64, u: f64, v: f64) -> Result<f64, PatientError> {
    check_rates(u, v)?;
    Ok(slope(params, v_tilde, u, v))
}

/// Steady state `c (u - v) / K` for constant inputs.
pub fn equilibrium(params: &PatientParams, u: f64, v: f64) -> f64 {
    params.input_gain() * (u - v) / params.k_shift
}

fn finish(state: &PatientState, y: f64, dt: f64) -> Result<PatientState, PatientError> {
    let t = state.t + dt;
    if y < -1.0 {
        return Err(PatientError::VolumeExhausted { t });
    }
    Ok(PatientState { v_tilde: y, t })
}

/// Advances `dt` minutes with constant inputs using the closed-form solution.
pub fn step_exact(
    params: &PatientParams,
    state: &PatientState,
    u: f64,
    v: f64,
    dt: f64,
) -> Result<PatientState, PatientError> {
    check_rates(u, v)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PatientError::InvalidStep);
    }
    let y_inf = equilibrium(params, u, v);
    let y = y_inf + (state.v_tilde - y_inf) * libm::exp(-params.k_shift * dt);
    finish(state, y, dt)
}

/// One classical Runge-Kutta step with constant inputs.
pub fn step_rk4(
    params: &PatientParams,
    state: &PatientState,
    u: f64,
    v: f64,
    dt: f64,
) -> Result<PatientState, PatientError> {
    check_rates(u, v)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PatientError::InvalidStep);
    }
    let y = state.v_tilde;
    let k1 = slope(params, y, u, v);
    let k2 = slope(params, y + 0.5 * dt * k1, u, v);
    let k3 = slope(params, y + 0.5 * dt * k2, u, v);
    let k4 = slope(params, y + dt * k3, u, v);
    finish(state, y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Rate over `[start, end)`, mL/min.
    pub value: f64,
}

/// Piecewise-constant rate on half-open segments `[start, end)`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Schedule {
    segments: Vec<Segment>,
}

impl Schedule {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self, PatientError> {
        for s in &segments {
            if !(s.start.is_finite() && s.end.is_finite() && s.end > s.start) {
                return Err(PatientError::InvalidSegment {
                    start: s.start,
                    end: s.end,
                });
            }
            if !(s.value.is_finite() && s.value >= 0.0) {
                return Err(PatientError::InvalidRate("schedule"));
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        if let Some(w) = segments.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(PatientError::InvalidSegment {
                start: w[1].start,
                end: w[1].end,
            });
        }
        Ok(Self { segments })
    }

    pub fn constant(value: f64, start: f64, end: f64) -> Result<Self, PatientError> {
        Self::new(alloc::vec![Segment { start, end, value }])
    }

    /// Consecutive pieces of length `dt` starting at `t0`.
    pub fn from_steps(t0: f64, dt: f64, values: &[f64]) -> Result<Self, PatientError> {
        let segments = values
            .iter()
            .enumerate()
            .map(|(i, &value)| Segment {
                start: t0 + dt * i as f64,
                end: t0 + dt * (i + 1) as f64,
                value,
            })
            .collect();
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn value_at(&self, t: f64) -> Result<f64, PatientError> {
        let i = self.segments.partition_point(|s| s.end <= t);
        match self.segments.get(i) {
            Some(s) if s.start <= t => Ok(s.value),
            _ => Err(PatientError::ScheduleGap { t }),
        }
    }

    /// Times in `(a, b)` where the value may change.
    fn breaks_in(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        for s in &self.segments {
            for t in [s.start, s.end] {
                if t > a && t < b {
                    out.push(t);
                }
            }
        }
    }
}

fn check_grid(dt: f64, horizon: f64) -> Result<usize, PatientError> {
    if !(dt.is_finite() && dt > 0.0 && horizon.is_finite() && horizon >= 0.0) {
        return Err(PatientError::InvalidStep);
    }
    Ok(libm::round(horizon / dt) as usize)
}

/// States at `t0 + k dt`, `k = 0..=horizon/dt`, advancing exactly across
/// every schedule breakpoint.
pub fn simulate(
    params: &PatientParams,
    y0: PatientState,
    u: &Schedule,
    v: &Schedule,
    dt: f64,
    horizon: f64,
) -> Result<Vec<PatientState>, PatientError> {
    let steps = check_grid(dt, horizon)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0);
    let mut state = y0;
    let mut breaks = Vec::new();
    for k in 0..steps {
        let a = y0.t + dt * k as f64;
        let b = y0.t + dt * (k + 1) as f64;
        breaks.clear();
        breaks.push(a);
        u.breaks_in(a, b, &mut breaks);
        v.breaks_in(a, b, &mut breaks);
        breaks.push(b);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        for w in breaks.windows(2) {
            let (ua, va) = (u.value_at(w[0])?, v.value_at(w[0])?);
            let next = step_exact(params, &state, ua, va, w[1] - w[0])?;
            state = PatientState {
                v_tilde: next.v_tilde,
                t: w[1],
            };
        }
        state.t = b;
        out.push(state);
    }
    Ok(out)
}

/// Fixed-step RK4 reference integrator; inputs are sampled at each step's
/// midpoint.
pub fn simulate_rk4(
    params: &PatientParams,
    y0: PatientState,
    u: &Schedule,
    v: &Schedule,
    dt: f64,
    horizon: f64,
) -> Result<Vec<PatientState>, PatientError> {
    let steps = check_grid(dt, horizon)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0);
    let mut state = y0;
    for k in 0..steps {
        let a = y0.t + dt * k as f64;
        let mid = a + 0.5 * dt;
        let next = step_rk4(params, &state, u.value_at(mid)?, v.value_at(mid)?, dt)?;
        state = PatientState {
            v_tilde: next.v_tilde,
            t: y0.t + dt * (k + 1) as f64,
        };
        out.push(state);
    }
    Ok(out)
}

/// Distribution of the additive measurement error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum NoiseShape {
    /// Uniform on `[-amplitude, amplitude]`.
    #[default]
    Uniform,
    /// Gaussian with standard deviation `sigma_ml`, redrawn until it falls
    /// inside `[-amplitude, amplitude]`.
    TruncatedGaussian { sigma_ml: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NoiseModel {
    /// Largest absolute error, mL. Zero disables noise.
    pub amplitude_ml: f64,
    pub shape: NoiseShape,
}

impl NoiseModel {
    pub fn uniform(amplitude_ml: f64) -> Self {
        Self {
            amplitude_ml,
            shape: NoiseShape::Uniform,
        }
    }

    pub fn validate(&self) -> Result<(), PatientError> {
        if !(self.amplitude_ml.is_finite() && self.amplitude_ml >= 0.0) {
            return Err(PatientError::InvalidNoise);
        }
        if let NoiseShape::TruncatedGaussian { sigma_ml } = self.shape {
            if !(sigma_ml.is_finite() && sigma_ml > 0.0) {
                return Err(PatientError::InvalidNoise);
            }
        }
        Ok(())
    }

    /// One draw of the measurement error. Draws nothing when disabled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.amplitude_ml;
        if a <= 0.0 {
            return 0.0;
        }
        match self.shape {
            NoiseShape::Uniform => rng.random_range(-a..=a),
            NoiseShape::TruncatedGaussian { sigma_ml } => {
                let Ok(normal) = Normal::new(0.0, sigma_ml) else {
                    return 0.0;
                };
                loop {
                    let e: f64 = normal.sample(rng);
                    if e.abs() <= a {
                        return e;
                    }
                }
            }
        }
    }
}

/// Measured absolute volume, mL: the true volume plus one noise draw.
pub fn measure<R: Rng + ?Sized>(
    state: &PatientState,
    params: &PatientParams,
    noise: &NoiseModel,
    rng: &mut R,
) -> f64 {
    state.volume_ml(params) + noise.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper() -> PatientParams {
        PatientParams::new(3940.0, 0.1, 2.0, 70.0).unwrap()
    }

    #[test]
    fn params_are_validated() {
        assert!(PatientParams::new(0.0, 0.1, 2.0, 70.0).is_err());
        assert!(PatientParams::new(3940.0, 0.0, 2.0, 70.0).is_err());
        assert!(PatientParams::new(3940.0, 0.1, -1.0, 70.0).is_err());
        assert!(PatientParams::new(3940.0, 0.1, 2.0, -3.0).is_err());
        assert_eq!(PatientParams::default(), paper());
    }

    #[test]
    fn rhs_examples() {
        let p = paper();
        assert_eq!(rhs(&p, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let d = rhs(&p, 0.0, 100.0, 0.0).unwrap();
        assert_abs_diff_eq!(d, 100.0 / 3940.0 + 10.0 / 11820.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.0262267, epsilon = 1e-7);
        let y = equilibrium(&p, 100.0, 0.0);
        assert!(rhs(&p, y, 100.0, 0.0).unwrap().abs() < 1e-15);
        assert!(rhs(&p, 0.0, -1.0, 0.0).is_err());
        assert!(rhs(&p, 0.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn step_exact_examples() {
        let p = paper();
        let s0 = PatientState::default();
        for dt in [0.1, 1.0, 37.0] {
            assert_eq!(step_exact(&p, &s0, 80.0, 80.0, dt).unwrap().v_tilde, 0.0);
        }
        let s = step_exact(&p, &s0, 100.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(s.v_tilde, 0.0249580, epsilon = 1e-6);
        assert_abs_diff_eq!(
            s.v_tilde,
            0.2622673 * (1.0 - libm::exp(-0.1)),
            epsilon = 1e-7
        );
        assert_eq!(s.t, 1.0);
        let far = step_exact(&p, &s0, 100.0, 0.0, 1000.0).unwrap();
        assert_abs_diff_eq!(far.v_tilde, equilibrium(&p, 100.0, 0.0), epsilon = 1e-10);
        assert_eq!(
            step_exact(&p, &s0, 1.0, 0.0, 0.0),
            Err(PatientError::InvalidStep)
        );
    }

    #[test]
    fn volume_cannot_go_negative() {
        let p = paper();
        let r = step_exact(&p, &PatientState::default(), 0.0, 5000.0, 10.0);
        assert!(matches!(r, Err(PatientError::VolumeExhausted { .. })));
    }

    #[test]
    fn schedules() {
        let s = Schedule::from_steps(0.0, 1.0, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.value_at(0.0).unwrap(), 1.0);
        assert_eq!(s.value_at(1.0).unwrap(), 2.0);
        assert_eq!(s.value_at(2.999).unwrap(), 3.0);
        assert_eq!(s.value_at(3.0), Err(PatientError::ScheduleGap { t: 3.0 }));
        let gap = Schedule::new(vec![
            Segment {
                start: 0.0,
                end: 1.0,
                value: 1.0,
            },
            Segment {
                start: 2.0,
                end: 3.0,
                value: 1.0,
            },
        ])
        .unwrap();
        let p = paper();
        let zero = Schedule::constant(0.0, 0.0, 3.0).unwrap();
        assert_eq!(
            simulate(&p, PatientState::default(), &gap, &zero, 1.0, 3.0),
            Err(PatientError::ScheduleGap { t: 1.0 })
        );
        assert!(Schedule::constant(1.0, 2.0, 1.0).is_err());
        assert!(Schedule::constant(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn zero_inputs_keep_state() {
        let p = paper();
        let zero = Schedule::constant(0.0, 0.0, 60.0).unwrap();
        let y0 = PatientState {
            v_tilde: 0.0,
            t: 0.0,
        };
        let tr = simulate(&p, y0, &zero, &zero, 1.0, 60.0).unwrap();
        assert_eq!(tr.len(), 61);
        assert!(tr.iter().all(|s| s.v_tilde == 0.0));
        assert_eq!(tr[60].t, 60.0);
    }

    #[test]
    fn constant_input_matches_rk4() {
        let p = paper();
        let u = Schedule::constant(120.0, 0.0, 60.0).unwrap();
        let v = Schedule::constant(0.0, 0.0, 60.0).unwrap();
        let y0 = PatientState::default();
        let exact = simulate(&p, y0, &u, &v, 1.0, 60.0).unwrap();
        let rk = simulate_rk4(&p, y0, &u, &v, 0.01, 60.0).unwrap();
        assert!((exact[60].v_tilde - rk[6000].v_tilde).abs() <= 1e-8);
    }

    #[test]
    fn sub_step_breakpoints_are_exact() {
        let p = paper();
        let u = Schedule::from_steps(0.0, 0.25, &[100.0, 0.0, 50.0, 10.0]).unwrap();
        let v = Schedule::constant(0.0, 0.0, 1.0).unwrap();
        let tr = simulate(&p, PatientState::default(), &u, &v, 1.0, 1.0).unwrap();
        let mut s = PatientState::default();
        for r in [100.0, 0.0, 50.0, 10.0] {
            s = step_exact(&p, &s, r, 0.0, 0.25).unwrap();
        }
        assert_abs_diff_eq!(tr[1].v_tilde, s.v_tilde, epsilon = 1e-16);
    }

    #[test]
    fn measurement() {
        let p = paper();
        let s = PatientState {
            v_tilde: 0.1,
            t: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            measure(&s, &p, &NoiseModel::uniform(0.0), &mut rng),
            3940.0 * 1.1
        );
        let n = NoiseModel::uniform(250.0);
        let truth = s.volume_ml(&p);
        let draws: Vec<f64> = (0..10_000).map(|_| measure(&s, &p, &n, &mut rng)).collect();
        assert!(draws.iter().all(|m| (m - truth).abs() <= 250.0));
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(measure(&s, &p, &n, &mut a), measure(&s, &p, &n, &mut b));
        }
        let g = NoiseModel {
            amplitude_ml: 250.0,
            shape: NoiseShape::TruncatedGaussian { sigma_ml: 200.0 },
        };
        assert!((0..5000).all(|_| g.sample(&mut rng).abs() <= 250.0));
        assert!(NoiseModel::uniform(-1.0).validate().is_err());
    }
}
