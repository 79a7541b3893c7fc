//! Continuous optimal control problem on a fixed time window.
//!
//! The problem is posed on normalized time `tau in [-1, 1]`:
//!
//! ```text
//! minimize   I(x(-1), t0, x(1), tf) + (tf - t0)/2 * integral L(x, u) dtau
//! subject to dx/dtau = (tf - t0)/2 * f(x, u)
//!            gamma(x(-1), t0, x(1), tf) = 0
//!            q(x, u) <= 0
//! ```
//!
//! `f` is stored unscaled; the `(tf - t0)/2` factor is applied by the
//! transcription so one problem can be re-used on shrinking horizons.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("tau = {0} lies outside [-1, 1]")]
    TauOutOfRange(f64),
    #[error("t = {t} lies outside [{t0}, {tf}]")]
    TimeOutOfRange { t: f64, t0: f64, tf: f64 },
    #[error("degenerate time window [{t0}, {tf}]")]
    DegenerateWindow { t0: f64, tf: f64 },
}

/// Fixed optimization window `[t0, tf]`, minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub t0: f64,
    pub tf: f64,
}

impl TimeWindow {
    pub fn new(t0: f64, tf: f64) -> Result<Self, OcpError> {
        if !(t0.is_finite() && tf.is_finite() && tf > t0) {
            return Err(OcpError::DegenerateWindow { t0, tf });
        }
        Ok(Self { t0, tf })
    }

    /// `(tf - t0) / 2`, the factor relating `d/dtau` and `d/dt`.
    pub fn half_span(&self) -> f64 {
        0.5 * (self.tf - self.t0)
    }

    pub fn to_time(&self, tau: f64) -> f64 {
        if tau == -1.0 {
            self.t0
        } else if tau == 1.0 {
            self.tf
        } else {
            self.half_span() * tau + 0.5 * (self.tf + self.t0)
        }
    }

    pub fn to_tau(&self, t: f64) -> f64 {
        if t == self.t0 {
            -1.0
        } else if t == self.tf {
            1.0
        } else {
            (2.0 * t - (self.tf + self.t0)) / (self.tf - self.t0)
        }
    }
}

/// `t = (tf - t0)/2 * tau + (tf + t0)/2`.
pub fn time_map(tau: f64, t0: f64, tf: f64) -> Result<f64, OcpError> {
    let w = TimeWindow::new(t0, tf)?;
    if !(-1.0..=1.0).contains(&tau) {
        return Err(OcpError::TauOutOfRange(tau));
    }
    Ok(w.to_time(tau))
}

/// Inverse of [`time_map`].
pub fn time_unmap(t: f64, t0: f64, tf: f64) -> Result<f64, OcpError> {
    let w = TimeWindow::new(t0, tf)?;
    if !(t0..=tf).contains(&t) {
        return Err(OcpError::TimeOutOfRange { t, t0, tf });
    }
    Ok(w.to_tau(t).clamp(-1.0, 1.0))
}

/// Box bound on one component; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

pub type PointFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type PointScalarFn = Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type EndpointFn = Box<dyn Fn(&[f64], &[f64], TimeWindow) -> Vec<f64> + Send + Sync>;
pub type EndpointScalarFn = Box<dyn Fn(&[f64], &[f64], TimeWindow) -> f64 + Send + Sync>;

/// Row-major partial derivatives of a function of `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    /// `rows x n_states`
    pub wrt_x: Vec<f64>,
    /// `rows x n_controls`
    pub wrt_u: Vec<f64>,
}

/// Row-major partial derivatives of a function of `(x(-1), x(1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPartials {
    /// `rows x n_states`
    pub wrt_initial: Vec<f64>,
    /// `rows x n_states`
    pub wrt_final: Vec<f64>,
}

pub type PointPartialsFn = Box<dyn Fn(&[f64], &[f64]) -> Partials + Send + Sync>;
pub type EndpointPartialsFn =
    Box<dyn Fn(&[f64], &[f64], TimeWindow) -> EndpointPartials + Send + Sync>;

/// Analytic first derivatives. When attached to a problem they must cover
/// every callback that problem defines.
#[derive(Default)]
pub struct Derivatives {
    pub dynamics: Option<PointPartialsFn>,
    pub lagrange: Option<PointPartialsFn>,
    pub mayer: Option<EndpointPartialsFn>,
    pub boundary: Option<EndpointPartialsFn>,
    pub path: Option<PointPartialsFn>,
}

pub struct OcpProblem {
    n_states: usize,
    n_controls: usize,
    window: TimeWindow,
    dynamics: PointFn,
    lagrange: Option<PointScalarFn>,
    mayer: Option<EndpointScalarFn>,
    boundary: Option<(usize, EndpointFn)>,
    path: Option<(usize, PointFn)>,
    state_bounds: Option<Vec<Bounds>>,
    control_bounds: Option<Vec<Bounds>>,
    derivatives: Option<Derivatives>,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("n_states", &self.n_states)
            .field("n_controls", &self.n_controls)
            .field("window", &self.window)
            .field("n_boundary", &self.n_boundary())
            .field("n_path", &self.n_path())
            .field("state_bounds", &self.state_bounds)
            .field("control_bounds", &self.control_bounds)
            .field("analytic_derivatives", &self.derivatives.is_some())
            .finish()
    }
}

impl OcpProblem {
    /// A problem with the given dynamics and no cost or constraints yet.
    pub fn new<F>(n_states: usize, n_controls: usize, window: TimeWindow, dynamics: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            n_states,
            n_controls,
            window,
            dynamics: Box::new(dynamics),
            lagrange: None,
            mayer: None,
            boundary: None,
            path: None,
            state_bounds: None,
            control_bounds: None,
            derivatives: None,
        }
    }

    pub fn with_lagrange<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.lagrange = Some(Box::new(f));
        self
    }

    pub fn with_mayer<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], TimeWindow) -> f64 + Send + Sync + 'static,
    {
        self.mayer = Some(Box::new(f));
        self
    }

    /// Equality constraints `gamma(x(-1), x(1)) = 0` with `count` rows.
    pub fn with_boundary<F>(mut self, count: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], TimeWindow) -> Vec<f64> + Send + Sync + 'static,
    {
        self.boundary = Some((count, Box::new(f)));
        self
    }

    /// Path inequalities `q(x, u) <= 0` with `count` rows.
    pub fn with_path<F>(mut self, count: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.path = Some((count, Box::new(f)));
        self
    }

    pub fn with_state_bounds(mut self, bounds: Vec<Bounds>) -> Self {
        self.state_bounds = Some(bounds);
        self
    }

    pub fn with_control_bounds(mut self, bounds: Vec<Bounds>) -> Self {
        self.control_bounds = Some(bounds);
        self
    }

    pub fn with_derivatives(mut self, d: Derivatives) -> Self {
        self.derivatives = Some(d);
        self
    }

    pub fn with_window(mut self, window: TimeWindow) -> Self {
        self.window = window;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.as_ref().map_or(0, |b| b.0)
    }

    pub fn n_path(&self) -> usize {
        self.path.as_ref().map_or(0, |p| p.0)
    }

    pub fn state_bounds(&self) -> Option<&[Bounds]> {
        self.state_bounds.as_deref()
    }

    pub fn control_bounds(&self) -> Option<&[Bounds]> {
        self.control_bounds.as_deref()
    }

    pub fn derivatives(&self) -> Option<&Derivatives> {
        self.derivatives.as_ref()
    }

    pub fn has_lagrange(&self) -> bool {
        self.lagrange.is_some()
    }

    pub fn has_mayer(&self) -> bool {
        self.mayer.is_some()
    }

    /// Unscaled right-hand side `f(x, u)`.
    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(x, u)
    }

    pub fn lagrange(&self, x: &[f64], u: &[f64]) -> f64 {
        self.lagrange.as_ref().map_or(0.0, |l| l(x, u))
    }

    pub fn mayer(&self, x_initial: &[f64], x_final: &[f64]) -> f64 {
        self.mayer
            .as_ref()
            .map_or(0.0, |m| m(x_initial, x_final, self.window))
    }

    pub fn boundary(&self, x_initial: &[f64], x_final: &[f64]) -> Vec<f64> {
        self.boundary
            .as_ref()
            .map_or_else(Vec::new, |(_, g)| g(x_initial, x_final, self.window))
    }

    pub fn path(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.path.as_ref().map_or_else(Vec::new, |(_, q)| q(x, u))
    }

    /// True when every defined callback has an analytic derivative.
    pub fn has_complete_derivatives(&self) -> bool {
        missing_derivatives(self).is_empty()
    }
}

fn missing_derivatives(p: &OcpProblem) -> Vec<&'static str> {
    let Some(d) = p.derivatives.as_ref() else {
        return vec!["all"];
    };
    let mut missing = Vec::new();
    if d.dynamics.is_none() {
        missing.push("dynamics");
    }
    if p.lagrange.is_some() && d.lagrange.is_none() {
        missing.push("lagrange");
    }
    if p.mayer.is_some() && d.mayer.is_none() {
        missing.push("mayer");
    }
    if p.boundary.is_some() && d.boundary.is_none() {
        missing.push("boundary");
    }
    if p.path.is_some() && d.path.is_none() {
        missing.push("path");
    }
    missing
}

/// One problem with a problem definition. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DegenerateTimeWindow,
    ZeroDimension,
    DynamicsDimensionMismatch { expected: usize, actual: usize },
    BoundaryDimensionMismatch { expected: usize, actual: usize },
    PathDimensionMismatch { expected: usize, actual: usize },
    StateBoundsDimensionMismatch { expected: usize, actual: usize },
    ControlBoundsDimensionMismatch { expected: usize, actual: usize },
    InvertedBounds { what: &'static str, index: usize },
    NonFiniteOutput(&'static str),
    DerivativeShape(&'static str),
    MissingDerivative(&'static str),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DegenerateTimeWindow => write!(f, "degenerate time window"),
            Violation::ZeroDimension => write!(f, "state dimension must be positive"),
            Violation::DynamicsDimensionMismatch { expected, actual } => write!(
                f,
                "dynamics dimension mismatch (expected {expected}, got {actual})"
            ),
            Violation::BoundaryDimensionMismatch { expected, actual } => write!(
                f,
                "boundary dimension mismatch (expected {expected}, got {actual})"
            ),
            Violation::PathDimensionMismatch { expected, actual } => write!(
                f,
                "path dimension mismatch (expected {expected}, got {actual})"
            ),
            Violation::StateBoundsDimensionMismatch { expected, actual } => write!(
                f,
                "state bounds dimension mismatch (expected {expected}, got {actual})"
            ),
            Violation::ControlBoundsDimensionMismatch { expected, actual } => write!(
                f,
                "control bounds dimension mismatch (expected {expected}, got {actual})"
            ),
            Violation::InvertedBounds { what, index } => {
                write!(f, "{what} bound {index} has lower > upper")
            }
            Violation::NonFiniteOutput(what) => write!(f, "{what} returned non-finite values"),
            Violation::DerivativeShape(what) => write!(f, "{what} derivative has wrong shape"),
            Violation::MissingDerivative(what) => write!(f, "missing {what} derivative"),
        }
    }
}

impl Violation {
    pub fn message(&self) -> String {
        format!("{self}")
    }
}

fn probe_point(n: usize, bounds: Option<&[Bounds]>) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let v = 0.1 * (i + 1) as f64;
            match bounds.and_then(|b| b.get(i)) {
                Some(b) if b.lower <= b.upper => v.clamp(b.lower, b.upper),
                _ => v,
            }
        })
        .collect()
}

/// Checks the time window, box bounds, and the output dimensions of every
/// callback at a probe point. An empty list means the problem is usable.
pub fn validate_problem(p: &OcpProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let w = p.window;
    if !(w.t0.is_finite() && w.tf.is_finite() && w.tf > w.t0) {
        out.push(Violation::DegenerateTimeWindow);
    }
    if p.n_states == 0 {
        out.push(Violation::ZeroDimension);
    }
    for (what, bounds, expected) in [
        ("state", p.state_bounds.as_deref(), p.n_states),
        ("control", p.control_bounds.as_deref(), p.n_controls),
    ] {
        let Some(b) = bounds else { continue };
        if b.len() != expected {
            let v = if what == "state" {
                Violation::StateBoundsDimensionMismatch {
                    expected,
                    actual: b.len(),
                }
            } else {
                Violation::ControlBoundsDimensionMismatch {
                    expected,
                    actual: b.len(),
                }
            };
            out.push(v);
        }
        for (index, bi) in b.iter().enumerate() {
            if bi.lower.is_nan() || bi.upper.is_nan() || bi.lower > bi.upper {
                out.push(Violation::InvertedBounds { what, index });
            }
        }
    }

    let x = probe_point(p.n_states, p.state_bounds.as_deref());
    let u = probe_point(p.n_controls, p.control_bounds.as_deref());
    let xf: Vec<f64> = x.iter().map(|v| v + 0.05).collect();

    let f = p.dynamics(&x, &u);
    if f.len() != p.n_states {
        out.push(Violation::DynamicsDimensionMismatch {
            expected: p.n_states,
            actual: f.len(),
        });
    } else if f.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFiniteOutput("dynamics"));
    }
    if let Some((g, _)) = &p.boundary {
        let r = p.boundary(&x, &xf);
        if r.len() != *g {
            out.push(Violation::BoundaryDimensionMismatch {
                expected: *g,
                actual: r.len(),
            });
        } else if r.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteOutput("boundary"));
        }
    }
    if let Some((n, _)) = &p.path {
        let r = p.path(&x, &u);
        if r.len() != *n {
            out.push(Violation::PathDimensionMismatch {
                expected: *n,
                actual: r.len(),
            });
        } else if r.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteOutput("path"));
        }
    }
    if !p.lagrange(&x, &u).is_finite() {
        out.push(Violation::NonFiniteOutput("lagrange"));
    }
    if !p.mayer(&x, &xf).is_finite() {
        out.push(Violation::NonFiniteOutput("mayer"));
    }

    if let Some(d) = &p.derivatives {
        for m in missing_derivatives(p) {
            out.push(Violation::MissingDerivative(m));
        }
        let (n, m) = (p.n_states, p.n_controls);
        let point_shape = |f: &Option<PointPartialsFn>, rows: usize| {
            f.as_ref().is_none_or(|f| {
                let pp = f(&x, &u);
                pp.wrt_x.len() == rows * n && pp.wrt_u.len() == rows * m
            })
        };
        let end_shape = |f: &Option<EndpointPartialsFn>, rows: usize| {
            f.as_ref().is_none_or(|f| {
                let pp = f(&x, &xf, w);
                pp.wrt_initial.len() == rows * n && pp.wrt_final.len() == rows * n
            })
        };
        if !point_shape(&d.dynamics, n) {
            out.push(Violation::DerivativeShape("dynamics"));
        }
        if !point_shape(&d.lagrange, 1) {
            out.push(Violation::DerivativeShape("lagrange"));
        }
        if !point_shape(&d.path, p.n_path()) {
            out.push(Violation::DerivativeShape("path"));
        }
        if !end_shape(&d.mayer, 1) {
            out.push(Violation::DerivativeShape("mayer"));
        }
        if !end_shape(&d.boundary, p.n_boundary()) {
            out.push(Violation::DerivativeShape("boundary"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(window: TimeWindow) -> OcpProblem {
        OcpProblem::new(1, 1, window, |x, u| vec![u[0] - x[0]])
            .with_lagrange(|x, u| x[0] * x[0] + u[0] * u[0])
            .with_boundary(1, |x0, _, _| vec![x0[0] - 1.0])
    }

    #[test]
    fn time_map_endpoints_and_midpoint() {
        assert_eq!(time_map(-1.0, 0.0, 60.0).unwrap(), 0.0);
        assert_eq!(time_map(1.0, 0.0, 60.0).unwrap(), 60.0);
        assert_eq!(time_map(0.0, 0.0, 60.0).unwrap(), 30.0);
        assert_eq!(time_map(-1.0, 13.7, 60.1).unwrap(), 13.7);
        assert_eq!(time_map(1.0, 13.7, 60.1).unwrap(), 60.1);
    }

    #[test]
    fn time_map_rejects_bad_input() {
        assert_eq!(time_map(1.5, 0.0, 60.0), Err(OcpError::TauOutOfRange(1.5)));
        assert!(matches!(
            time_map(0.0, 5.0, 5.0),
            Err(OcpError::DegenerateWindow { .. })
        ));
        assert!(time_unmap(61.0, 0.0, 60.0).is_err());
    }

    #[test]
    fn time_map_round_trip() {
        let (t0, tf) = (3.25, 47.5);
        for k in 0..=1000 {
            let tau = -1.0 + 2.0 * k as f64 / 1000.0;
            let t = time_map(tau, t0, tf).unwrap();
            let back = time_unmap(t, t0, tf).unwrap();
            assert!((back - tau).abs() <= 1e-14, "{tau} -> {t} -> {back}");
        }
    }

    #[test]
    fn well_formed_problem_is_valid() {
        let p = simple(TimeWindow { t0: 0.0, tf: 1.0 });
        assert!(validate_problem(&p).is_empty());
    }

    #[test]
    fn degenerate_window_is_reported() {
        let p = simple(TimeWindow { t0: 2.0, tf: 2.0 });
        let v = validate_problem(&p);
        assert_eq!(v, vec![Violation::DegenerateTimeWindow]);
        assert_eq!(v[0].message(), "degenerate time window");
    }

    #[test]
    fn dynamics_dimension_mismatch_is_reported() {
        let p = OcpProblem::new(2, 1, TimeWindow { t0: 0.0, tf: 1.0 }, |_, u| vec![u[0]]);
        let v = validate_problem(&p);
        assert_eq!(
            v,
            vec![Violation::DynamicsDimensionMismatch {
                expected: 2,
                actual: 1
            }]
        );
        assert!(v[0].message().starts_with("dynamics dimension mismatch"));
    }

    #[test]
    fn bounds_and_callbacks_are_checked() {
        let p = simple(TimeWindow { t0: 0.0, tf: 1.0 })
            .with_control_bounds(vec![Bounds::new(2.0, 1.0)])
            .with_state_bounds(vec![Bounds::unbounded(); 2])
            .with_path(2, |x, _| vec![x[0]]);
        let v = validate_problem(&p);
        assert!(v.contains(&Violation::InvertedBounds {
            what: "control",
            index: 0
        }));
        assert!(v.contains(&Violation::StateBoundsDimensionMismatch {
            expected: 1,
            actual: 2
        }));
        assert!(v.contains(&Violation::PathDimensionMismatch {
            expected: 2,
            actual: 1
        }));
    }

    #[test]
    fn incomplete_derivatives_are_reported() {
        let d = Derivatives {
            dynamics: Some(Box::new(|_, _| Partials {
                wrt_x: vec![-1.0],
                wrt_u: vec![1.0],
            })),
            ..Default::default()
        };
        let p = simple(TimeWindow { t0: 0.0, tf: 1.0 }).with_derivatives(d);
        let v = validate_problem(&p);
        assert!(v.contains(&Violation::MissingDerivative("lagrange")));
        assert!(v.contains(&Violation::MissingDerivative("boundary")));
        assert!(!p.has_complete_derivatives());
    }
}
