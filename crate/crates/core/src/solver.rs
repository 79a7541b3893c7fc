//! Augmented-Lagrangian solver with a BFGS inner loop.
//!
//! Solves
//!
//! ```text
//! minimize f(z)  subject to  c(z) = 0,  g(z) <= 0
//! ```
//!
//! with the Lagrangian `f - lambda^T c + mu^T g`, `mu >= 0`. Derivatives come
//! from the problem when it provides them and from central differences
//! otherwise.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::inf_norm;

/// Penalty parameters above this are treated as evidence of infeasibility.
pub const MAX_PENALTY: f64 = 1e12;

/// Values of the objective and both constraint blocks at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.objective.is_finite()
            && self.eq.iter().all(|v| v.is_finite())
            && self.ineq.iter().all(|v| v.is_finite())
    }
}

/// A smooth nonlinear program. Jacobians are dense and row-major in the
/// sense of `nalgebra` (one row per constraint, one column per variable).
pub trait Nlp {
    fn dim(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn objective(&self, z: &[f64]) -> f64;
    fn eq_constraints(&self, z: &[f64]) -> Vec<f64>;
    fn ineq_constraints(&self, z: &[f64]) -> Vec<f64>;

    /// All three blocks at once. Override when they share work.
    fn evaluate(&self, z: &[f64]) -> Evaluation {
        Evaluation {
            objective: self.objective(z),
            eq: self.eq_constraints(z),
            ineq: self.ineq_constraints(z),
        }
    }

    fn objective_gradient(&self, _z: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn eq_jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn ineq_jacobian(&self, _z: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// An [`Nlp`] assembled from closures.
pub struct FnNlp {
    dim: usize,
    objective: ScalarFn,
    gradient: Option<VectorFn>,
    eq: Option<(usize, VectorFn)>,
    ineq: Option<(usize, VectorFn)>,
}

impl FnNlp {
    pub fn new<F>(dim: usize, objective: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            objective: Box::new(objective),
            gradient: None,
            eq: None,
            ineq: None,
        }
    }

    pub fn with_gradient<F>(mut self, g: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Box::new(g));
        self
    }

    pub fn with_eq<F>(mut self, count: usize, c: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.eq = Some((count, Box::new(c)));
        self
    }

    pub fn with_ineq<F>(mut self, count: usize, g: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.ineq = Some((count, Box::new(g)));
        self
    }
}

impl Nlp for FnNlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |e| e.0)
    }

    fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |e| e.0)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        (self.objective)(z)
    }

    fn eq_constraints(&self, z: &[f64]) -> Vec<f64> {
        self.eq.as_ref().map_or_else(Vec::new, |(_, c)| c(z))
    }

    fn ineq_constraints(&self, z: &[f64]) -> Vec<f64> {
        self.ineq.as_ref().map_or_else(Vec::new, |(_, g)| g(z))
    }

    fn objective_gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(z))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverOptions {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub feasibility_tolerance: f64,
    pub stationarity_tolerance: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            max_inner_iterations: 200,
            feasibility_tolerance: 1e-6,
            stationarity_tolerance: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            fd_step: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.feasibility_tolerance)
            || !positive(self.stationarity_tolerance)
            || !positive(self.initial_penalty)
            || !positive(self.fd_step)
            || !(self.penalty_growth.is_finite() && self.penalty_growth > 1.0)
            || self.max_outer_iterations == 0
        {
            return Err(SolverError::InvalidOptions);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// Infinity norms of the first-order optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    pub complementarity: f64,
}

impl KktReport {
    fn worst() -> Self {
        Self {
            stationarity: f64::INFINITY,
            eq_violation: f64::INFINITY,
            ineq_violation: f64::INFINITY,
            complementarity: f64::INFINITY,
        }
    }

    fn satisfied(&self, opts: &SolverOptions) -> bool {
        self.eq_violation <= opts.feasibility_tolerance
            && self.ineq_violation <= opts.feasibility_tolerance
            && self.stationarity <= opts.stationarity_tolerance
    }

    /// Largest violation relative to its tolerance; used to rank iterates.
    fn score(&self, opts: &SolverOptions) -> f64 {
        let feas = self.eq_violation.max(self.ineq_violation) / opts.feasibility_tolerance;
        let stat = self.stationarity / opts.stationarity_tolerance;
        let s = feas.max(stat);
        if s.is_nan() {
            f64::INFINITY
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub kkt: KktReport,
    pub multipliers: Multipliers,
    /// Inner (quasi-Newton) iterations summed over all outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("expected a point of dimension {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("starting point is not finite")]
    NonFiniteStart,
    #[error("invalid solver options")]
    InvalidOptions,
    #[error("finite-difference step must be positive")]
    InvalidStep,
    #[error("function is not finite near the evaluation point")]
    NonFinite,
}

/// Central-difference gradient `(f(z + h e_i) - f(z - h e_i)) / 2h`.
pub fn fd_gradient<F>(f: F, z: &[f64], h: f64) -> Result<Vec<f64>, SolverError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(SolverError::InvalidStep);
    }
    let mut p = z.to_vec();
    let mut g = vec![0.0; z.len()];
    for i in 0..z.len() {
        p[i] = z[i] + h;
        let fp = f(&p);
        p[i] = z[i] - h;
        let fm = f(&p);
        p[i] = z[i];
        let gi = (fp - fm) / (2.0 * h);
        if !gi.is_finite() {
            return Err(SolverError::NonFinite);
        }
        g[i] = gi;
    }
    Ok(g)
}

/// First derivatives of all three blocks at one point.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub gradient: DVector<f64>,
    pub eq_jacobian: DMatrix<f64>,
    pub ineq_jacobian: DMatrix<f64>,
}

/// Analytic derivatives where the problem supplies them, central differences
/// for the rest. Returns `None` if anything is non-finite.
pub fn derivatives<N: Nlp + ?Sized>(nlp: &N, z: &[f64], h: f64) -> Option<Derivatives> {
    let d = nlp.dim();
    let gradient = nlp.objective_gradient(z).map(DVector::from_vec);
    let eq_jacobian = if nlp.n_eq() == 0 {
        Some(DMatrix::zeros(0, d))
    } else {
        nlp.eq_jacobian(z)
    };
    let ineq_jacobian = if nlp.n_ineq() == 0 {
        Some(DMatrix::zeros(0, d))
    } else {
        nlp.ineq_jacobian(z)
    };

    let (gradient, eq_jacobian, ineq_jacobian) =
        if gradient.is_some() && eq_jacobian.is_some() && ineq_jacobian.is_some() {
            (gradient?, eq_jacobian?, ineq_jacobian?)
        } else {
            let mut g = DVector::zeros(d);
            let mut je = DMatrix::zeros(nlp.n_eq(), d);
            let mut ji = DMatrix::zeros(nlp.n_ineq(), d);
            let mut p = z.to_vec();
            for i in 0..d {
                p[i] = z[i] + h;
                let plus = nlp.evaluate(&p);
                p[i] = z[i] - h;
                let minus = nlp.evaluate(&p);
                p[i] = z[i];
                if plus.eq.len() != je.nrows() || plus.ineq.len() != ji.nrows() {
                    return None;
                }
                let inv = 1.0 / (2.0 * h);
                g[i] = (plus.objective - minus.objective) * inv;
                for r in 0..je.nrows() {
                    je[(r, i)] = (plus.eq[r] - minus.eq[r]) * inv;
                }
                for r in 0..ji.nrows() {
                    ji[(r, i)] = (plus.ineq[r] - minus.ineq[r]) * inv;
                }
            }
            (
                gradient.unwrap_or(g),
                eq_jacobian.unwrap_or(je),
                ineq_jacobian.unwrap_or(ji),
            )
        };
    let finite = gradient.iter().all(|v| v.is_finite())
        && eq_jacobian.iter().all(|v| v.is_finite())
        && ineq_jacobian.iter().all(|v| v.is_finite());
    finite.then_some(Derivatives {
        gradient,
        eq_jacobian,
        ineq_jacobian,
    })
}

fn report(ev: &Evaluation, dv: &Derivatives, m: &Multipliers) -> KktReport {
    let le = DVector::from_column_slice(&m.eq);
    let li = DVector::from_column_slice(&m.ineq);
    let grad = &dv.gradient - dv.eq_jacobian.tr_mul(&le) + dv.ineq_jacobian.tr_mul(&li);
    KktReport {
        stationarity: grad.amax(),
        eq_violation: inf_norm(&ev.eq),
        ineq_violation: ev.ineq.iter().fold(0.0, |a, &g| a.max(g.max(0.0))),
        complementarity: m
            .ineq
            .iter()
            .zip(&ev.ineq)
            .fold(0.0, |a, (mu, g)| a.max((mu * g).abs())),
    }
}

/// KKT norms at `z` for the given multipliers.
pub fn kkt_residual<N: Nlp + ?Sized>(nlp: &N, z: &[f64], m: &Multipliers, h: f64) -> KktReport {
    let ev = nlp.evaluate(z);
    match derivatives(nlp, z, h) {
        Some(dv) if ev.is_finite() => report(&ev, &dv, m),
        _ => KktReport::worst(),
    }
}

/// The augmented Lagrangian for fixed multipliers and penalty.
struct Merit<'a, N: ?Sized> {
    nlp: &'a N,
    lambda: &'a [f64],
    mu: &'a [f64],
    rho: f64,
    h: f64,
}

/// Merit value, gradient, and the constraint rows currently penalized.
struct MeritPoint {
    value: f64,
    gradient: DVector<f64>,
    active: DMatrix<f64>,
}

impl<N: Nlp + ?Sized> Merit<'_, N> {
    fn value_of(&self, ev: &Evaluation) -> f64 {
        let mut v = ev.objective;
        for (c, l) in ev.eq.iter().zip(self.lambda) {
            v += -l * c + 0.5 * self.rho * c * c;
        }
        for (g, m) in ev.ineq.iter().zip(self.mu) {
            let s = (m + self.rho * g).max(0.0);
            v += (s * s - m * m) / (2.0 * self.rho);
        }
        v
    }

    fn shapes_match(&self, ev: &Evaluation) -> bool {
        ev.eq.len() == self.lambda.len() && ev.ineq.len() == self.mu.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let ev = self.nlp.evaluate(z);
        if !self.shapes_match(&ev) {
            return f64::NAN;
        }
        self.value_of(&ev)
    }

    fn point(&self, z: &[f64]) -> Option<MeritPoint> {
        let ev = self.nlp.evaluate(z);
        if !ev.is_finite() || !self.shapes_match(&ev) {
            return None;
        }
        let dv = derivatives(self.nlp, z, self.h)?;
        let we = DVector::from_iterator(
            ev.eq.len(),
            ev.eq.iter().zip(self.lambda).map(|(c, l)| self.rho * c - l),
        );
        let shifted: Vec<f64> = ev
            .ineq
            .iter()
            .zip(self.mu)
            .map(|(g, m)| (m + self.rho * g).max(0.0))
            .collect();
        let wi = DVector::from_column_slice(&shifted);
        let gradient = dv.gradient + dv.eq_jacobian.tr_mul(&we) + dv.ineq_jacobian.tr_mul(&wi);

        let d = self.nlp.dim();
        let active_ineq: Vec<usize> = (0..shifted.len()).filter(|&i| shifted[i] > 0.0).collect();
        let mut active = DMatrix::zeros(ev.eq.len() + active_ineq.len(), d);
        active.rows_mut(0, ev.eq.len()).copy_from(&dv.eq_jacobian);
        for (r, &i) in active_ineq.iter().enumerate() {
            active
                .row_mut(ev.eq.len() + r)
                .copy_from(&dv.ineq_jacobian.row(i));
        }
        Some(MeritPoint {
            value: self.value_of(&ev),
            gradient,
            active,
        })
    }
}

enum InnerOutcome {
    Converged,
    Stalled,
    MaxIterations,
    Failure,
}

/// Damped BFGS model of the curvature not captured by the penalty term
/// `rho J^T J`, which is formed exactly from the active Jacobian.
struct Bfgs {
    b: DMatrix<f64>,
    scaled: bool,
}

impl Bfgs {
    fn new(d: usize) -> Self {
        Self {
            b: DMatrix::identity(d, d),
            scaled: false,
        }
    }

    fn reset(&mut self) {
        self.b.fill_with_identity();
        self.scaled = false;
    }

    fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) {
        let ys = y.dot(s);
        if ys <= 1e-10 * s.norm() * y.norm() {
            return;
        }
        if !self.scaled {
            self.b.fill_with_identity();
            self.b *= y.dot(y) / ys;
            self.scaled = true;
        }
        let bs = &self.b * s;
        let sbs = s.dot(&bs);
        if !(sbs > 0.0) {
            return;
        }
        // Powell damping keeps the model positive definite.
        let (y, ys) = if ys < 0.2 * sbs {
            let theta = 0.8 * sbs / (sbs - ys);
            let yd = theta * y + (1.0 - theta) * &bs;
            let ysd = yd.dot(s);
            (yd, ysd)
        } else {
            (y.clone(), ys)
        };
        self.b.ger(1.0 / ys, &y, &y, 1.0);
        self.b.ger(-1.0 / sbs, &bs, &bs, 1.0);
    }

    /// Solves `(B + rho A^T A) p = -g`, regularizing until the matrix factors.
    fn direction(&self, rho: f64, active: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
        let mut h = self.b.clone();
        if active.nrows() > 0 {
            h.gemm_tr(rho, active, active, 1.0);
        }
        let scale = (0..h.nrows())
            .fold(0.0f64, |a, i| a.max(h[(i, i)].abs()))
            .max(1e-300);
        let mut shift = 0.0;
        for _ in 0..30 {
            let mut m = h.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                let p = -ch.solve(g);
                if p.iter().all(|v| v.is_finite()) {
                    return Some(p);
                }
            }
            shift = if shift == 0.0 {
                1e-12 * scale
            } else {
                10.0 * shift
            };
        }
        None
    }
}

/// Minimizes the merit function from `z` in place.
fn inner_solve<N: Nlp + ?Sized>(
    merit: &Merit<'_, N>,
    z: &mut [f64],
    bfgs: &mut Bfgs,
    tol: f64,
    max_iter: usize,
    iterations: &mut usize,
) -> InnerOutcome {
    let Some(mut pt) = merit.point(z) else {
        return InnerOutcome::Failure;
    };
    let mut reset_once = false;
    for _ in 0..max_iter {
        if pt.gradient.amax() <= tol {
            return InnerOutcome::Converged;
        }
        let g = &pt.gradient;
        let mut p = bfgs
            .direction(merit.rho, &pt.active, g)
            .unwrap_or_else(|| -g.clone());
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            bfgs.reset();
            p = -g.clone();
            slope = g.dot(&p);
        }

        let x0 = DVector::from_column_slice(z);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x0 + alpha * &p;
            let ft = merit.value(trial.as_slice());
            if ft.is_finite() && ft <= pt.value + 1e-4 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            let next = if ft.is_finite() {
                let denom = 2.0 * (ft - pt.value - slope * alpha);
                if denom > 0.0 {
                    -slope * alpha * alpha / denom
                } else {
                    0.5 * alpha
                }
            } else {
                0.1 * alpha
            };
            alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
        }

        let Some(trial) = accepted else {
            if reset_once {
                return InnerOutcome::Stalled;
            }
            reset_once = true;
            bfgs.reset();
            continue;
        };
        let Some(next) = merit.point(trial.as_slice()) else {
            return InnerOutcome::Failure;
        };
        *iterations += 1;
        let s = &trial - &x0;
        let mut y = &next.gradient - &pt.gradient;
        if next.active.nrows() > 0 {
            let as_ = &next.active * &s;
            y -= merit.rho * next.active.tr_mul(&as_);
        }
        bfgs.update(&s, &y);
        z.copy_from_slice(trial.as_slice());
        pt = next;
        reset_once = false;
    }
    if pt.gradient.amax() <= tol {
        InnerOutcome::Converged
    } else {
        InnerOutcome::MaxIterations
    }
}

/// Solves `nlp` from `z0`. Deterministic: equal inputs give equal results.
pub fn solve<N: Nlp + ?Sized>(
    nlp: &N,
    z0: &[f64],
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    opts.validate()?;
    let d = nlp.dim();
    if z0.len() != d {
        return Err(SolverError::DimensionMismatch {
            expected: d,
            actual: z0.len(),
        });
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteStart);
    }

    let mut z = z0.to_vec();
    let mut m = Multipliers {
        eq: vec![0.0; nlp.n_eq()],
        ineq: vec![0.0; nlp.n_ineq()],
    };
    let mut rho = opts.initial_penalty;
    let mut bfgs = Bfgs::new(d);
    let mut iterations = 0;
    let mut prev_violation = f64::INFINITY;
    let mut best: Option<(f64, Vec<f64>, Multipliers, KktReport)> = None;
    let mut failures = 0;
    let inner_tol = 0.5 * opts.stationarity_tolerance;

    let finish = |z: Vec<f64>, m: Multipliers, kkt: KktReport, status, iterations, outer| {
        let objective_value = nlp.objective(&z);
        SolveResult {
            z_star: z,
            objective_value,
            status,
            kkt,
            multipliers: m,
            iterations,
            outer_iterations: outer,
        }
    };

    for outer in 1..=opts.max_outer_iterations {
        let merit = Merit {
            nlp,
            lambda: &m.eq,
            mu: &m.ineq,
            rho,
            h: opts.fd_step,
        };
        let start = z.clone();
        let outcome = inner_solve(
            &merit,
            &mut z,
            &mut bfgs,
            inner_tol,
            opts.max_inner_iterations,
            &mut iterations,
        );
        if let InnerOutcome::Failure = outcome {
            failures += 1;
            z = start;
            bfgs.reset();
            if failures > 2 {
                let (z, m, kkt) = match best {
                    Some((_, z, m, k)) => (z, m, k),
                    None => (z, m, KktReport::worst()),
                };
                return Ok(finish(
                    z,
                    m,
                    kkt,
                    SolveStatus::NumericalFailure,
                    iterations,
                    outer,
                ));
            }
            rho *= opts.penalty_growth;
            continue;
        }

        let ev = nlp.evaluate(&z);
        let Some(dv) = derivatives(nlp, &z, opts.fd_step).filter(|_| ev.is_finite()) else {
            return Ok(finish(
                z,
                m,
                KktReport::worst(),
                SolveStatus::NumericalFailure,
                iterations,
                outer,
            ));
        };
        for (l, c) in m.eq.iter_mut().zip(&ev.eq) {
            *l -= rho * c;
        }
        for (mu, g) in m.ineq.iter_mut().zip(&ev.ineq) {
            *mu = (*mu + rho * g).max(0.0);
        }
        let kkt = report(&ev, &dv, &m);
        let score = kkt.score(opts);
        if best.as_ref().is_none_or(|b| score <= b.0) {
            best = Some((score, z.clone(), m.clone(), kkt));
        }
        if kkt.satisfied(opts) {
            return Ok(finish(z, m, kkt, SolveStatus::Converged, iterations, outer));
        }

        let violation = kkt.eq_violation.max(kkt.ineq_violation);
        if violation > opts.feasibility_tolerance && violation > 0.25 * prev_violation {
            rho *= opts.penalty_growth;
            if rho > MAX_PENALTY {
                return Ok(finish(
                    z,
                    m,
                    kkt,
                    SolveStatus::Infeasible,
                    iterations,
                    outer,
                ));
            }
        }
        prev_violation = violation;
    }

    let (z, m, kkt) = match best {
        Some((_, z, m, k)) => (z, m, k),
        None => (z, m, KktReport::worst()),
    };
    Ok(finish(
        z,
        m,
        kkt,
        SolveStatus::MaxIterations,
        iterations,
        opts.max_outer_iterations,
    ))
}
