//! RBF-Galerkin transcription of an [`OcpProblem`] into an [`Nlp`].
//!
//! Each channel shares one basis of `N` functions centered at `c_1..c_N`.
//! Decision variables are nodal values rather than raw weights. With the
//! cardinal functions `l_i(tau)` (`l_i(c_j) = delta_ij`) the channels are
//!
//! ```text
//! x_k(tau) = o_k + sum_i l_i(tau) (v_ki - o_k)
//! u_j(tau) = p_j + sum_i l_i(tau) (w_ji - p_j)
//! ```
//!
//! so `x_k(c_i) = v_ki`. The extra constants `o_k`, `p_j` let the trial
//! space represent constants exactly. The control offsets are optional
//! (`control_offsets`); without them `p_j = 0`. The decision vector is
//!
//! ```text
//! [v_11..v_1N, o_1, ..., v_n1..v_nN, o_n, w_11..w_1N, p_1, ..., w_m1..w_mN, p_m]
//! ```
//!
//! Equality rows are the Galerkin projections `sum_q w_q psi_j(tau_q) R_k(tau_q)`
//! of the residual `R_k = dx_k/dtau - (tf - t0)/2 f_k`, grouped by state
//! channel (row `k N + j`), followed by the boundary conditions. Inequality
//! rows are the path constraints at every enforcement point (point-major),
//! then the finite state box bounds and the finite control box bounds, each
//! point-major with `lower - value <= 0` before `value - upper <= 0`.
//! The test functions `psi_j` are either the kernels or the cardinal
//! functions, see [`TestFunctions`].

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::Factorized;
use crate::ocp::{validate_problem, Bounds, OcpProblem, TimeWindow, Violation};
use crate::quadrature::{lg_rule, QuadratureError, QuadratureRule};
use crate::rbf::{CenterLayout, KernelKind, RbfBasis, RbfError, MAX_CONDITION};
use crate::solver::{Evaluation, Nlp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptionError {
    #[error("invalid problem: {0:?}")]
    InvalidProblem(Vec<Violation>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Rbf(#[from] RbfError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("expected a decision vector of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dynamics are not finite at tau = {tau}")]
    NonFiniteDynamics { tau: f64 },
}

/// Basis of the Galerkin test space. Both span the trial space; the
/// cardinal basis gives far better conditioned constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TestFunctions {
    /// The kernels `phi_j` themselves.
    Rbf,
    /// The cardinal functions `l_j`.
    #[default]
    Cardinal,
}

/// Where path constraints and box bounds are imposed.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Enforcement {
    #[default]
    QuadratureNodes,
    /// The quadrature nodes plus `tau = -1` and `tau = 1`.
    QuadratureNodesAndEndpoints,
    Points(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TranscriptionConfig {
    pub n_basis: usize,
    pub kernel: KernelKind,
    pub epsilon: f64,
    /// Defaults to `n_basis + 5`.
    pub n_quadrature: Option<usize>,
    pub centers: CenterLayout,
    pub test_functions: TestFunctions,
    pub enforcement: Enforcement,
    /// Give each control channel a constant offset like the states. Needed
    /// when controls must hold a constant exactly up to the window edges.
    pub control_offsets: bool,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        Self {
            n_basis: 12,
            kernel: KernelKind::Gaussian,
            epsilon: 2.0,
            n_quadrature: None,
            centers: CenterLayout::GaussLegendre,
            test_functions: TestFunctions::Cardinal,
            enforcement: Enforcement::QuadratureNodes,
            control_offsets: false,
        }
    }
}

impl TranscriptionConfig {
    pub fn quadrature_order(&self) -> usize {
        self.n_quadrature.unwrap_or(self.n_basis + 5)
    }

    pub fn validate(&self) -> Result<(), TranscriptionError> {
        if self.n_basis < 3 {
            return Err(TranscriptionError::InvalidConfig(
                "n_basis must be at least 3",
            ));
        }
        if self.quadrature_order() < self.n_basis {
            return Err(TranscriptionError::InvalidConfig(
                "n_quadrature must be at least n_basis",
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(TranscriptionError::InvalidConfig(
                "epsilon must be positive",
            ));
        }
        if let Enforcement::Points(p) = &self.enforcement {
            if p.iter().any(|t| !(-1.0..=1.0).contains(t)) {
                return Err(TranscriptionError::InvalidConfig(
                    "enforcement points must lie in [-1, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// Cardinal functions of a basis: `L(tau) = phi(tau)^T Phi_c^{-1}`.
#[derive(Debug, Clone)]
struct Cardinal {
    basis: RbfBasis,
    lu: Factorized,
}

impl Cardinal {
    fn new(basis: RbfBasis) -> Result<Self, RbfError> {
        let lu = Factorized::new(basis.center_matrix()).ok_or(RbfError::IllConditioned {
            condition: f64::INFINITY,
        })?;
        if lu.condition > MAX_CONDITION {
            return Err(RbfError::IllConditioned {
                condition: lu.condition,
            });
        }
        Ok(Self { basis, lu })
    }

    /// Values and `tau`-derivatives of the cardinal functions, one row per point.
    fn eval(&self, points: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), RbfError> {
        let d = self.basis.design_matrices(points)?;
        let singular = || RbfError::IllConditioned {
            condition: f64::INFINITY,
        };
        let l = self.lu.solve_right(&d.values).ok_or_else(singular)?;
        let ld = self.lu.solve_right(&d.derivatives).ok_or_else(singular)?;
        Ok((l, ld))
    }
}

/// `o + sum_i l_i (v_i - o)`; `o = 0` for controls.
fn combine(l: &DMatrix<f64>, row: usize, nodal: &[f64], offset: f64) -> f64 {
    let mut acc = 0.0;
    for (i, v) in nodal.iter().enumerate() {
        acc += l[(row, i)] * (v - offset);
    }
    offset + acc
}

/// `d/d(offset)` of [`combine`]: `1 - sum_i l_i`.
fn offset_sensitivity(l: &DMatrix<f64>, row: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..l.ncols() {
        s += l[(row, i)];
    }
    1.0 - s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    State(usize),
    Control(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BoxRow {
    point: usize,
    channel: Channel,
    /// `+1` for `value - upper`, `-1` for `lower - value`.
    sign: f64,
    bound: f64,
}

/// Basis matrices at one family of points.
#[derive(Debug, Clone)]
struct PointSet {
    tau: Vec<f64>,
    l: DMatrix<f64>,
    ld: DMatrix<f64>,
    aug: Vec<f64>,
    aug_d: Vec<f64>,
}

impl PointSet {
    fn new(card: &Cardinal, tau: Vec<f64>) -> Result<Self, RbfError> {
        let (l, ld) = card.eval(&tau)?;
        let aug = (0..tau.len()).map(|r| offset_sensitivity(&l, r)).collect();
        let aug_d = (0..tau.len())
            .map(|r| offset_sensitivity(&ld, r) - 1.0)
            .collect();
        Ok(Self {
            tau,
            l,
            ld,
            aug,
            aug_d,
        })
    }

    fn len(&self) -> usize {
        self.tau.len()
    }
}

/// States and controls sampled at a point set, row-major per point.
struct Samples {
    x: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

/// Transcribed problem. Borrows the problem it came from.
pub struct TranscribedNlp<'p> {
    problem: &'p OcpProblem,
    config: TranscriptionConfig,
    card: Cardinal,
    quad: QuadratureRule,
    nodes: PointSet,
    ends: PointSet,
    enforce: PointSet,
    /// `test[(j, q)] = w_q psi_j(tau_q)` for the test functions `psi_j`
    test: DMatrix<f64>,
    box_rows: Vec<BoxRow>,
    analytic: bool,
}

impl core::fmt::Debug for TranscribedNlp<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TranscribedNlp")
            .field("problem", self.problem)
            .field("config", &self.config)
            .field("dim", &self.dim())
            .field("n_eq", &self.n_eq())
            .field("n_ineq", &self.n_ineq())
            .finish()
    }
}

fn box_rows(
    bounds: Option<&[Bounds]>,
    points: usize,
    channel: fn(usize) -> Channel,
    out: &mut Vec<BoxRow>,
) {
    let Some(bounds) = bounds else { return };
    for point in 0..points {
        for (k, b) in bounds.iter().enumerate() {
            if b.lower.is_finite() {
                out.push(BoxRow {
                    point,
                    channel: channel(k),
                    sign: -1.0,
                    bound: b.lower,
                });
            }
            if b.upper.is_finite() {
                out.push(BoxRow {
                    point,
                    channel: channel(k),
                    sign: 1.0,
                    bound: b.upper,
                });
            }
        }
    }
}

/// Builds the NLP for `problem`. Fails if the problem does not validate or
/// the basis is too ill-conditioned to use.
pub fn transcribe(
    problem: &OcpProblem,
    config: TranscriptionConfig,
) -> Result<TranscribedNlp<'_>, TranscriptionError> {
    config.validate()?;
    let violations = validate_problem(problem);
    if !violations.is_empty() {
        return Err(TranscriptionError::InvalidProblem(violations));
    }
    let basis = RbfBasis::with_layout(
        config.kernel,
        config.epsilon,
        config.n_basis,
        config.centers,
    )?;
    let card = Cardinal::new(basis)?;
    let quad = lg_rule(config.quadrature_order())?;

    let nodes = PointSet::new(&card, quad.nodes().to_vec())?;
    let ends = PointSet::new(&card, vec![-1.0, 1.0])?;
    let enforce_tau = match &config.enforcement {
        Enforcement::QuadratureNodes => quad.nodes().to_vec(),
        Enforcement::QuadratureNodesAndEndpoints => {
            let mut t = vec![-1.0];
            t.extend_from_slice(quad.nodes());
            t.push(1.0);
            t
        }
        Enforcement::Points(p) => p.clone(),
    };
    let enforce = if enforce_tau.is_empty() {
        PointSet {
            tau: Vec::new(),
            l: DMatrix::zeros(0, config.n_basis),
            ld: DMatrix::zeros(0, config.n_basis),
            aug: Vec::new(),
            aug_d: Vec::new(),
        }
    } else {
        PointSet::new(&card, enforce_tau)?
    };

    let n = config.n_basis;
    let test = DMatrix::from_fn(n, quad.order(), |j, q| {
        let v = match config.test_functions {
            TestFunctions::Rbf => card.basis.phi(j, quad.nodes()[q]),
            TestFunctions::Cardinal => nodes.l[(q, j)],
        };
        quad.weights()[q] * v
    });

    let mut rows = Vec::new();
    box_rows(
        problem.state_bounds(),
        enforce.len(),
        Channel::State,
        &mut rows,
    );
    box_rows(
        problem.control_bounds(),
        enforce.len(),
        Channel::Control,
        &mut rows,
    );

    Ok(TranscribedNlp {
        problem,
        analytic: problem.has_complete_derivatives(),
        config,
        card,
        quad,
        nodes,
        ends,
        enforce,
        test,
        box_rows: rows,
    })
}

/// Galerkin projections of the dynamics residual, `N * n_states` values.
pub fn galerkin_residuals(
    problem: &OcpProblem,
    config: TranscriptionConfig,
    z: &[f64],
) -> Result<Vec<f64>, TranscriptionError> {
    transcribe(problem, config)?.galerkin_residuals(z)
}

impl<'p> TranscribedNlp<'p> {
    pub fn problem(&self) -> &'p OcpProblem {
        self.problem
    }

    pub fn config(&self) -> &TranscriptionConfig {
        &self.config
    }

    pub fn basis(&self) -> &RbfBasis {
        &self.card.basis
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn enforcement_points(&self) -> &[f64] {
        &self.enforce.tau
    }

    pub fn window(&self) -> TimeWindow {
        self.problem.window()
    }

    fn n(&self) -> usize {
        self.config.n_basis
    }

    fn ns(&self) -> usize {
        self.problem.n_states()
    }

    fn nc(&self) -> usize {
        self.problem.n_controls()
    }

    /// Index of the first variable of state channel `k`.
    pub fn state_offset(&self, k: usize) -> usize {
        k * (self.n() + 1)
    }

    /// Index of the first variable of control channel `j`.
    pub fn control_offset(&self, j: usize) -> usize {
        self.ns() * (self.n() + 1) + j * self.control_width()
    }

    fn control_width(&self) -> usize {
        self.n() + usize::from(self.config.control_offsets)
    }

    fn state_block<'z>(&self, z: &'z [f64], k: usize) -> (&'z [f64], f64) {
        let s = self.state_offset(k);
        (&z[s..s + self.n()], z[s + self.n()])
    }

    fn control_block<'z>(&self, z: &'z [f64], j: usize) -> (&'z [f64], f64) {
        let s = self.control_offset(j);
        let offset = if self.config.control_offsets {
            z[s + self.n()]
        } else {
            0.0
        };
        (&z[s..s + self.n()], offset)
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), TranscriptionError> {
        if z.len() != self.dim() {
            return Err(TranscriptionError::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    fn sample(&self, set: &PointSet, z: &[f64], derivative: bool) -> Samples {
        let (ns, nc) = (self.ns(), self.nc());
        let mut s = Samples {
            x: vec![vec![0.0; ns]; set.len()],
            dx: if derivative {
                vec![vec![0.0; ns]; set.len()]
            } else {
                Vec::new()
            },
            u: vec![vec![0.0; nc]; set.len()],
        };
        for r in 0..set.len() {
            for k in 0..ns {
                let (v, o) = self.state_block(z, k);
                s.x[r][k] = combine(&set.l, r, v, o);
                if derivative {
                    s.dx[r][k] = combine(&set.ld, r, v, o) - o;
                }
            }
            for j in 0..nc {
                let (w, o) = self.control_block(z, j);
                s.u[r][j] = combine(&set.l, r, w, o);
            }
        }
        s
    }

    fn endpoints(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.sample(&self.ends, z, false);
        let mut it = s.x.into_iter();
        (it.next().unwrap_or_default(), it.next().unwrap_or_default())
    }

    fn project(&self, s: &Samples, f: &[Vec<f64>], out: &mut Vec<f64>) {
        let half = self.window().half_span();
        for k in 0..self.ns() {
            for j in 0..self.n() {
                let mut acc = 0.0;
                for (q, (dx, fq)) in s.dx.iter().zip(f).enumerate() {
                    acc += self.test[(j, q)] * (dx[k] - half * fq[k]);
                }
                out.push(acc);
            }
        }
    }

    /// Galerkin rows only (the first `N * n_states` equality rows).
    pub fn galerkin_residuals(&self, z: &[f64]) -> Result<Vec<f64>, TranscriptionError> {
        self.check_dim(z)?;
        let s = self.sample(&self.nodes, z, true);
        let mut f = Vec::with_capacity(self.quad.order());
        for (q, &tau) in self.quad.nodes().iter().enumerate() {
            let fq = self.problem.dynamics(&s.x[q], &s.u[q]);
            if fq.len() != self.ns() || fq.iter().any(|v| !v.is_finite()) {
                return Err(TranscriptionError::NonFiniteDynamics { tau });
            }
            f.push(fq);
        }
        let mut out = Vec::with_capacity(self.n() * self.ns());
        self.project(&s, &f, &mut out);
        Ok(out)
    }

    /// Deterministic starting point: states on the straight line from
    /// `x_start` to `x_end`, controls constant.
    pub fn initial_guess(&self, x_start: &[f64], x_end: &[f64], u_const: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        let centers = self.card.basis.centers();
        for k in 0..self.ns() {
            let (a, b) = (x_start[k], x_end[k]);
            let s = self.state_offset(k);
            for (i, c) in centers.iter().enumerate() {
                z[s + i] = a + 0.5 * (c + 1.0) * (b - a);
            }
            z[s + self.n()] = 0.5 * (a + b);
        }
        for (j, &u) in u_const.iter().enumerate().take(self.nc()) {
            let s = self.control_offset(j);
            z[s..s + self.control_width()].fill(u);
        }
        z
    }

    /// Decision vector whose nodal values sample `traj` at this
    /// transcription's centers (mapped through both time windows).
    pub fn encode(&self, traj: &Trajectory) -> Result<Vec<f64>, TranscriptionError> {
        let mut z = vec![0.0; self.dim()];
        let w = self.window();
        let (t0, tf) = (traj.window.t0, traj.window.tf);
        let old_tau = |tau: f64| {
            traj.window
                .to_tau(w.to_time(tau).clamp(t0, tf))
                .clamp(-1.0, 1.0)
        };
        for (i, &c) in self.card.basis.centers().iter().enumerate() {
            let x = traj.state(old_tau(c))?;
            let u = traj.control(old_tau(c))?;
            for k in 0..self.ns().min(x.len()) {
                z[self.state_offset(k) + i] = x[k];
            }
            for j in 0..self.nc().min(u.len()) {
                z[self.control_offset(j) + i] = u[j];
            }
        }
        let mid = traj.state(old_tau(0.0))?;
        for k in 0..self.ns().min(mid.len()) {
            z[self.state_offset(k) + self.n()] = mid[k];
        }
        let mid = traj.control(old_tau(0.0))?;
        for j in 0..self.nc().min(mid.len()) {
            if !self.config.control_offsets {
                break;
            }
            z[self.control_offset(j) + self.n()] = mid[j];
        }
        Ok(z)
    }

    pub fn extract_trajectory(&self, z: &[f64]) -> Result<Trajectory, TranscriptionError> {
        self.check_dim(z)?;
        let (ns, nc) = (self.ns(), self.nc());
        let state_nodal = (0..ns).map(|k| self.state_block(z, k).0.to_vec()).collect();
        let state_offsets = (0..ns).map(|k| self.state_block(z, k).1).collect();
        let control_nodal = (0..nc)
            .map(|j| self.control_block(z, j).0.to_vec())
            .collect();
        let control_offsets = (0..nc).map(|j| self.control_block(z, j).1).collect();
        Ok(Trajectory {
            card: self.card.clone(),
            window: self.window(),
            state_nodal,
            state_offsets,
            control_nodal,
            control_offsets,
        })
    }

    fn path_and_boxes(&self, z: &[f64], out: &mut Vec<f64>) {
        if self.enforce.len() == 0 {
            return;
        }
        let s = self.sample(&self.enforce, z, false);
        if self.problem.n_path() > 0 {
            for r in 0..self.enforce.len() {
                out.extend(self.problem.path(&s.x[r], &s.u[r]));
            }
        }
        for b in &self.box_rows {
            let v = match b.channel {
                Channel::State(k) => s.x[b.point][k],
                Channel::Control(j) => s.u[b.point][j],
            };
            out.push(b.sign * (v - b.bound));
        }
    }

    /// Jacobian contribution of `d(value at row r of set)/dz` scaled by `a`,
    /// added into `row` of `jac`.
    fn add_state_sens(
        &self,
        jac: &mut DMatrix<f64>,
        row: usize,
        set_l: &DMatrix<f64>,
        aug: f64,
        r: usize,
        k: usize,
        a: f64,
    ) {
        let s = self.state_offset(k);
        for i in 0..self.n() {
            jac[(row, s + i)] += a * set_l[(r, i)];
        }
        jac[(row, s + self.n())] += a * aug;
    }

    fn add_control_sens(
        &self,
        jac: &mut DMatrix<f64>,
        row: usize,
        set_l: &DMatrix<f64>,
        aug: f64,
        r: usize,
        j: usize,
        a: f64,
    ) {
        let s = self.control_offset(j);
        for i in 0..self.n() {
            jac[(row, s + i)] += a * set_l[(r, i)];
        }
        if self.config.control_offsets {
            jac[(row, s + self.n())] += a * aug;
        }
    }
}

impl Nlp for TranscribedNlp<'_> {
    fn dim(&self) -> usize {
        (self.n() + 1) * self.ns() + self.control_width() * self.nc()
    }

    fn n_eq(&self) -> usize {
        self.n() * self.ns() + self.problem.n_boundary()
    }

    fn n_ineq(&self) -> usize {
        self.problem.n_path() * self.enforce.len() + self.box_rows.len()
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let (x0, xf) = self.endpoints(z);
        let mut j = self.problem.mayer(&x0, &xf);
        if self.problem.has_lagrange() {
            let s = self.sample(&self.nodes, z, false);
            let mut acc = 0.0;
            for (q, w) in self.quad.weights().iter().enumerate() {
                acc += w * self.problem.lagrange(&s.x[q], &s.u[q]);
            }
            j += self.window().half_span() * acc;
        }
        j
    }

    fn eq_constraints(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self
            .galerkin_residuals(z)
            .unwrap_or_else(|_| vec![f64::NAN; self.n() * self.ns()]);
        let (x0, xf) = self.endpoints(z);
        out.extend(self.problem.boundary(&x0, &xf));
        out
    }

    fn ineq_constraints(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_ineq());
        self.path_and_boxes(z, &mut out);
        out
    }

    fn evaluate(&self, z: &[f64]) -> Evaluation {
        let s = self.sample(&self.nodes, z, true);
        let (x0, xf) = self.endpoints(z);
        let half = self.window().half_span();

        let mut objective = self.problem.mayer(&x0, &xf);
        let mut f = Vec::with_capacity(self.quad.order());
        let mut lag = 0.0;
        for (q, w) in self.quad.weights().iter().enumerate() {
            if self.problem.has_lagrange() {
                lag += w * self.problem.lagrange(&s.x[q], &s.u[q]);
            }
            f.push(self.problem.dynamics(&s.x[q], &s.u[q]));
        }
        objective += half * lag;

        let mut eq = Vec::with_capacity(self.n_eq());
        if f.iter().all(|fq| fq.len() == self.ns()) {
            self.project(&s, &f, &mut eq);
        } else {
            eq.resize(self.n() * self.ns(), f64::NAN);
        }
        eq.extend(self.problem.boundary(&x0, &xf));

        let mut ineq = Vec::with_capacity(self.n_ineq());
        self.path_and_boxes(z, &mut ineq);
        Evaluation {
            objective,
            eq,
            ineq,
        }
    }

    fn objective_gradient(&self, z: &[f64]) -> Option<Vec<f64>> {
        if !self.analytic {
            return None;
        }
        let d = self.problem.derivatives()?;
        let mut g = DMatrix::zeros(1, self.dim());
        if let Some(m) = &d.mayer {
            let (x0, xf) = self.endpoints(z);
            let p = m(&x0, &xf, self.window());
            for k in 0..self.ns() {
                self.add_state_sens(
                    &mut g,
                    0,
                    &self.ends.l,
                    self.ends.aug[0],
                    0,
                    k,
                    p.wrt_initial[k],
                );
                self.add_state_sens(
                    &mut g,
                    0,
                    &self.ends.l,
                    self.ends.aug[1],
                    1,
                    k,
                    p.wrt_final[k],
                );
            }
        }
        if let Some(l) = &d.lagrange {
            let s = self.sample(&self.nodes, z, false);
            let half = self.window().half_span();
            for (q, w) in self.quad.weights().iter().enumerate() {
                let p = l(&s.x[q], &s.u[q]);
                let a = half * w;
                for k in 0..self.ns() {
                    self.add_state_sens(
                        &mut g,
                        0,
                        &self.nodes.l,
                        self.nodes.aug[q],
                        q,
                        k,
                        a * p.wrt_x[k],
                    );
                }
                for j in 0..self.nc() {
                    self.add_control_sens(
                        &mut g,
                        0,
                        &self.nodes.l,
                        self.nodes.aug[q],
                        q,
                        j,
                        a * p.wrt_u[j],
                    );
                }
            }
        }
        Some(g.as_slice().to_vec())
    }

    fn eq_jacobian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        if !self.analytic {
            return None;
        }
        let d = self.problem.derivatives()?;
        let dyn_d = d.dynamics.as_ref()?;
        let (n, ns, nc) = (self.n(), self.ns(), self.nc());
        let half = self.window().half_span();
        let s = self.sample(&self.nodes, z, false);
        let mut jac = DMatrix::zeros(self.n_eq(), self.dim());

        // d(residual_k at q)/dz, reused for every test function j.
        let mut dres = DMatrix::zeros(ns, self.dim());
        for q in 0..self.quad.order() {
            dres.fill(0.0);
            let p = dyn_d(&s.x[q], &s.u[q]);
            for k in 0..ns {
                let so = self.state_offset(k);
                for i in 0..n {
                    dres[(k, so + i)] += self.nodes.ld[(q, i)];
                }
                dres[(k, so + n)] += self.nodes.aug_d[q];
                for k2 in 0..ns {
                    let a = -half * p.wrt_x[k * ns + k2];
                    if a != 0.0 {
                        self.add_state_sens(
                            &mut dres,
                            k,
                            &self.nodes.l,
                            self.nodes.aug[q],
                            q,
                            k2,
                            a,
                        );
                    }
                }
                for j2 in 0..nc {
                    let a = -half * p.wrt_u[k * nc + j2];
                    if a != 0.0 {
                        self.add_control_sens(
                            &mut dres,
                            k,
                            &self.nodes.l,
                            self.nodes.aug[q],
                            q,
                            j2,
                            a,
                        );
                    }
                }
            }
            for k in 0..ns {
                for j in 0..n {
                    let t = self.test[(j, q)];
                    for c in 0..dres.ncols() {
                        jac[(k * n + j, c)] += t * dres[(k, c)];
                    }
                }
            }
        }

        if self.problem.n_boundary() > 0 {
            let bd = d.boundary.as_ref()?;
            let (x0, xf) = self.endpoints(z);
            let p = bd(&x0, &xf, self.window());
            for r in 0..self.problem.n_boundary() {
                let row = n * ns + r;
                for k in 0..ns {
                    self.add_state_sens(
                        &mut jac,
                        row,
                        &self.ends.l,
                        self.ends.aug[0],
                        0,
                        k,
                        p.wrt_initial[r * ns + k],
                    );
                    self.add_state_sens(
                        &mut jac,
                        row,
                        &self.ends.l,
                        self.ends.aug[1],
                        1,
                        k,
                        p.wrt_final[r * ns + k],
                    );
                }
            }
        }
        Some(jac)
    }

    fn ineq_jacobian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        if !self.analytic {
            return None;
        }
        let d = self.problem.derivatives()?;
        let (ns, nc) = (self.ns(), self.nc());
        let mut jac = DMatrix::zeros(self.n_ineq(), self.dim());
        let e = &self.enforce;
        let np = self.problem.n_path();
        if np > 0 {
            let pd = d.path.as_ref()?;
            let s = self.sample(e, z, false);
            for r in 0..e.len() {
                let p = pd(&s.x[r], &s.u[r]);
                for c in 0..np {
                    let row = r * np + c;
                    for k in 0..ns {
                        self.add_state_sens(
                            &mut jac,
                            row,
                            &e.l,
                            e.aug[r],
                            r,
                            k,
                            p.wrt_x[c * ns + k],
                        );
                    }
                    for j in 0..nc {
                        self.add_control_sens(
                            &mut jac,
                            row,
                            &e.l,
                            e.aug[r],
                            r,
                            j,
                            p.wrt_u[c * nc + j],
                        );
                    }
                }
            }
        }
        let base = np * e.len();
        for (i, b) in self.box_rows.iter().enumerate() {
            match b.channel {
                Channel::State(k) => self.add_state_sens(
                    &mut jac,
                    base + i,
                    &e.l,
                    e.aug[b.point],
                    b.point,
                    k,
                    b.sign,
                ),
                Channel::Control(j) => self.add_control_sens(
                    &mut jac,
                    base + i,
                    &e.l,
                    e.aug[b.point],
                    b.point,
                    j,
                    b.sign,
                ),
            }
        }
        Some(jac)
    }
}

/// Continuous-time solution recovered from a decision vector.
#[derive(Debug, Clone)]
pub struct Trajectory {
    card: Cardinal,
    window: TimeWindow,
    state_nodal: Vec<Vec<f64>>,
    state_offsets: Vec<f64>,
    control_nodal: Vec<Vec<f64>>,
    control_offsets: Vec<f64>,
}

impl Trajectory {
    pub fn basis(&self) -> &RbfBasis {
        &self.card.basis
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn n_states(&self) -> usize {
        self.state_nodal.len()
    }

    pub fn n_controls(&self) -> usize {
        self.control_nodal.len()
    }

    fn rows(&self, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), TranscriptionError> {
        Ok(self.card.eval(&[tau])?)
    }

    /// `x(tau)`
    pub fn state(&self, tau: f64) -> Result<Vec<f64>, TranscriptionError> {
        let (l, _) = self.rows(tau)?;
        Ok(self
            .state_nodal
            .iter()
            .zip(&self.state_offsets)
            .map(|(v, &o)| combine(&l, 0, v, o))
            .collect())
    }

    /// `dx/dtau`
    pub fn state_derivative(&self, tau: f64) -> Result<Vec<f64>, TranscriptionError> {
        let (_, ld) = self.rows(tau)?;
        Ok(self
            .state_nodal
            .iter()
            .zip(&self.state_offsets)
            .map(|(v, &o)| combine(&ld, 0, v, o) - o)
            .collect())
    }

    /// `u(tau)`
    pub fn control(&self, tau: f64) -> Result<Vec<f64>, TranscriptionError> {
        let (l, _) = self.rows(tau)?;
        Ok(self
            .control_nodal
            .iter()
            .zip(&self.control_offsets)
            .map(|(w, &o)| combine(&l, 0, w, o))
            .collect())
    }

    pub fn state_at_time(&self, t: f64) -> Result<Vec<f64>, TranscriptionError> {
        self.state(self.tau_of(t)?)
    }

    pub fn control_at_time(&self, t: f64) -> Result<Vec<f64>, TranscriptionError> {
        self.control(self.tau_of(t)?)
    }

    fn tau_of(&self, t: f64) -> Result<f64, TranscriptionError> {
        if !(self.window.t0..=self.window.tf).contains(&t) {
            return Err(RbfError::OutOfDomain(t).into());
        }
        Ok(self.window.to_tau(t).clamp(-1.0, 1.0))
    }

    /// Values at the centers, one vector per state channel.
    pub fn state_nodal_values(&self) -> &[Vec<f64>] {
        &self.state_nodal
    }

    pub fn state_offsets(&self) -> &[f64] {
        &self.state_offsets
    }

    pub fn control_nodal_values(&self) -> &[Vec<f64>] {
        &self.control_nodal
    }

    pub fn control_offsets(&self) -> &[f64] {
        &self.control_offsets
    }

    fn weights(
        &self,
        nodal: &[Vec<f64>],
        offsets: &[f64],
    ) -> Result<Vec<Vec<f64>>, TranscriptionError> {
        nodal
            .iter()
            .zip(offsets)
            .map(|(v, &o)| {
                let rhs: Vec<f64> = v.iter().map(|x| x - o).collect();
                self.card.lu.solve(&rhs).ok_or(
                    RbfError::IllConditioned {
                        condition: self.card.lu.condition,
                    }
                    .into(),
                )
            })
            .collect()
    }

    /// Raw RBF weights `a_k` with `x_k(tau) = o_k + sum_i a_ki phi_i(tau)`.
    pub fn state_weights(&self) -> Result<Vec<Vec<f64>>, TranscriptionError> {
        self.weights(&self.state_nodal, &self.state_offsets)
    }

    /// Raw RBF weights `b_j` with `u_j(tau) = p_j + sum_i b_ji phi_i(tau)`.
    pub fn control_weights(&self) -> Result<Vec<Vec<f64>>, TranscriptionError> {
        self.weights(&self.control_nodal, &self.control_offsets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{Derivatives, EndpointPartials, Partials};
    use crate::solver::{derivatives, solve, SolveStatus, SolverOptions};
    use alloc::boxed::Box;

    fn w01() -> TimeWindow {
        TimeWindow::new(0.0, 1.0).unwrap()
    }

    fn cfg(n: usize) -> TranscriptionConfig {
        TranscriptionConfig {
            n_basis: n,
            ..Default::default()
        }
    }

    #[test]
    fn dimensions() {
        let p = OcpProblem::new(1, 1, w01(), |_, u| vec![u[0]]);
        let nlp = transcribe(&p, cfg(10)).unwrap();
        // N nodal values per channel plus one offset per state
        assert_eq!(nlp.dim(), 21);
        let with = TranscriptionConfig {
            control_offsets: true,
            ..cfg(10)
        };
        assert_eq!(transcribe(&p, with).unwrap().dim(), 22);
        assert_eq!(nlp.n_eq(), 10);
        assert_eq!(nlp.n_ineq(), 0);

        let p = p.with_boundary(2, |x0, xf, _| vec![x0[0], xf[0] - 1.0]);
        let nlp = transcribe(&p, cfg(10)).unwrap();
        assert_eq!(nlp.n_eq(), 12);
        assert_eq!(nlp.eq_constraints(&vec![0.0; nlp.dim()]).len(), 12);
    }

    #[test]
    fn inequality_rows() {
        let p = OcpProblem::new(1, 1, w01(), |_, u| vec![u[0]])
            .with_path(1, |x, u| vec![x[0] + u[0] - 2.0])
            .with_state_bounds(vec![Bounds::new(0.0, f64::INFINITY)])
            .with_control_bounds(vec![Bounds::new(-1.0, 1.0)]);
        let c = TranscriptionConfig {
            enforcement: Enforcement::QuadratureNodesAndEndpoints,
            ..cfg(6)
        };
        let nlp = transcribe(&p, c).unwrap();
        let e = nlp.enforcement_points().len();
        assert_eq!(e, 13);
        assert_eq!(nlp.n_ineq(), e + e + 2 * e);
        let g = nlp.ineq_constraints(&vec![0.0; nlp.dim()]);
        assert_eq!(g.len(), nlp.n_ineq());
        assert!(g[..e].iter().all(|v| (v + 2.0).abs() < 1e-12));
        assert!(g[e..2 * e].iter().all(|v| v.abs() < 1e-12));
        assert!(g[2 * e..].iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_config() {
        let p = OcpProblem::new(1, 1, w01(), |_, u| vec![u[0]]);
        assert!(matches!(
            transcribe(&p, cfg(2)),
            Err(TranscriptionError::InvalidConfig(_))
        ));
        let c = TranscriptionConfig {
            n_quadrature: Some(5),
            ..cfg(8)
        };
        assert!(matches!(
            transcribe(&p, c),
            Err(TranscriptionError::InvalidConfig(_))
        ));
        let bad = OcpProblem::new(2, 1, w01(), |_, u| vec![u[0]]);
        assert!(matches!(
            transcribe(&bad, cfg(8)),
            Err(TranscriptionError::InvalidProblem(_))
        ));
        let ill = TranscriptionConfig {
            epsilon: 0.1,
            ..cfg(20)
        };
        assert!(matches!(
            transcribe(&p, ill),
            Err(TranscriptionError::Rbf(RbfError::IllConditioned { .. }))
        ));
    }

    #[test]
    fn zero_decision_vector() {
        let p = OcpProblem::new(1, 1, w01(), |_, _| vec![0.0]);
        let nlp = transcribe(&p, cfg(8)).unwrap();
        let z = vec![0.0; nlp.dim()];
        assert!(nlp
            .galerkin_residuals(&z)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let t = nlp.extract_trajectory(&z).unwrap();
        for k in 0..=20 {
            let tau = -1.0 + 0.1 * k as f64;
            assert_eq!(t.state(tau).unwrap(), vec![0.0]);
            assert_eq!(t.control(tau).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn mayer_only_objective_is_exact() {
        let p = OcpProblem::new(1, 1, w01(), |_, u| vec![u[0]])
            .with_mayer(|x0, xf, _| 3.0 * xf[0] - x0[0]);
        let nlp = transcribe(&p, cfg(8)).unwrap();
        let z: Vec<f64> = (0..nlp.dim()).map(|i| libm::sin(i as f64)).collect();
        let (x0, xf) = nlp.endpoints(&z);
        assert_eq!(nlp.objective(&z), 3.0 * xf[0] - x0[0]);
        assert_eq!(nlp.evaluate(&z).objective, nlp.objective(&z));
    }

    #[test]
    fn trajectory_matches_nlp_samples_exactly() {
        let p = OcpProblem::new(2, 1, w01(), |x, u| vec![x[1], u[0]]);
        let nlp = transcribe(&p, cfg(9)).unwrap();
        let z: Vec<f64> = (0..nlp.dim()).map(|i| libm::cos(0.7 * i as f64)).collect();
        let s = nlp.sample(&nlp.nodes, &z, true);
        let t = nlp.extract_trajectory(&z).unwrap();
        for (q, &tau) in nlp.quadrature().nodes().iter().enumerate() {
            assert_eq!(t.state(tau).unwrap(), s.x[q]);
            assert_eq!(t.state_derivative(tau).unwrap(), s.dx[q]);
            assert_eq!(t.control(tau).unwrap(), s.u[q]);
        }
        for (i, &c) in nlp.basis().centers().iter().enumerate() {
            let x = t.state(c).unwrap();
            assert!((x[0] - z[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectory_matches_raw_weights() {
        let p = OcpProblem::new(1, 1, w01(), |_, u| vec![u[0]]);
        let nlp = transcribe(&p, cfg(10)).unwrap();
        let z: Vec<f64> = (0..nlp.dim()).map(|i| 0.3 * i as f64 - 1.0).collect();
        let t = nlp.extract_trajectory(&z).unwrap();
        let a = t.state_weights().unwrap();
        let b = t.control_weights().unwrap();
        let pts: Vec<f64> = (0..41).map(|k| -1.0 + 0.05 * k as f64).collect();
        let dm = nlp.basis().design_matrices(&pts).unwrap();
        for (r, &tau) in pts.iter().enumerate() {
            let xa: f64 =
                t.state_offsets()[0] + (0..10).map(|i| dm.values[(r, i)] * a[0][i]).sum::<f64>();
            let ub: f64 =
                t.control_offsets()[0] + (0..10).map(|i| dm.values[(r, i)] * b[0][i]).sum::<f64>();
            assert!((t.state(tau).unwrap()[0] - xa).abs() < 1e-8);
            assert!((t.control(tau).unwrap()[0] - ub).abs() < 1e-8);
        }
    }

    #[test]
    fn constants_are_represented_exactly() {
        let p = OcpProblem::new(1, 1, w01(), |_, _| vec![0.0]);
        let nlp = transcribe(&p, cfg(12)).unwrap();
        let mut z = vec![0.0; nlp.dim()];
        z[..13].fill(4.5);
        let r = nlp.galerkin_residuals(&z).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
        let t = nlp.extract_trajectory(&z).unwrap();
        for tau in [-1.0, -0.99, 0.3, 1.0] {
            assert!((t.state(tau).unwrap()[0] - 4.5).abs() < 1e-12);
        }
    }

    fn di_derivatives() -> Derivatives {
        Derivatives {
            dynamics: Some(Box::new(|_, _| Partials {
                wrt_x: vec![0.0, 1.0, 0.0, 0.0],
                wrt_u: vec![0.0, 1.0],
            })),
            lagrange: Some(Box::new(|_, u| Partials {
                wrt_x: vec![0.0, 0.0],
                wrt_u: vec![u[0]],
            })),
            boundary: Some(Box::new(|_, _, _| EndpointPartials {
                wrt_initial: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                wrt_final: vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            })),
            ..Default::default()
        }
    }

    fn double_integrator() -> OcpProblem {
        OcpProblem::new(2, 1, w01(), |x, u| vec![x[1], u[0]])
            .with_lagrange(|_, u| 0.5 * u[0] * u[0])
            .with_boundary(4, |x0, xf, _| vec![x0[0], x0[1], xf[0] - 1.0, xf[1]])
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let with_path = |p: OcpProblem| {
            p.with_path(1, |x, u| vec![x[0] * u[0] - 0.5])
                .with_control_bounds(vec![Bounds::new(-10.0, 10.0)])
        };
        let mut d = di_derivatives();
        d.path = Some(Box::new(|x, u| Partials {
            wrt_x: vec![u[0], 0.0],
            wrt_u: vec![x[0]],
        }));
        let p = with_path(double_integrator()).with_derivatives(d);
        let fd_p = with_path(double_integrator());
        let nlp = transcribe(&p, cfg(8)).unwrap();
        let fd_nlp = transcribe(&fd_p, cfg(8)).unwrap();
        let z: Vec<f64> = (0..nlp.dim()).map(|i| libm::sin(1.3 * i as f64)).collect();
        assert!(nlp.objective_gradient(&z).is_some());
        assert!(fd_nlp.objective_gradient(&z).is_none());
        let a = derivatives(&nlp, &z, 1e-6).unwrap();
        let fd = derivatives(&fd_nlp, &z, 1e-6).unwrap();
        let close = |x: &f64, y: &f64| (x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs()));
        assert!(a
            .gradient
            .iter()
            .zip(fd.gradient.iter())
            .all(|(x, y)| close(x, y)));
        assert!(a
            .eq_jacobian
            .iter()
            .zip(fd.eq_jacobian.iter())
            .all(|(x, y)| close(x, y)));
        assert!(a
            .ineq_jacobian
            .iter()
            .zip(fd.ineq_jacobian.iter())
            .all(|(x, y)| close(x, y)));
    }

    #[test]
    fn double_integrator_solution() {
        let p = double_integrator();
        let c = TranscriptionConfig {
            n_basis: 16,
            n_quadrature: Some(21),
            ..Default::default()
        };
        let nlp = transcribe(&p, c).unwrap();
        let z0 = nlp.initial_guess(&[0.0, 0.0], &[1.0, 0.0], &[0.0]);
        let r = solve(&nlp, &z0, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{r:?}");
        assert!((r.objective_value - 6.0).abs() <= 1e-4);
        let t = nlp.extract_trajectory(&r.z_star).unwrap();
        for k in 0..=100 {
            let time = k as f64 / 100.0;
            let u = t.control_at_time(time).unwrap()[0];
            assert!((u - (6.0 - 12.0 * time)).abs() <= 1e-3, "t={time} u={u}");
        }
    }
}
