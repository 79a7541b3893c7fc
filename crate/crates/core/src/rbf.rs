//! Global radial basis functions on the normalized time axis `[-1, 1]`.
//!
//! Basis function `i` is `phi_i(tau) = rho(|tau - c_i|)` for a kernel `rho`
//! with shape parameter `epsilon`. Only infinitely smooth kernels are offered.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{inf_norm, Factorized};
use crate::quadrature::lg_rule;

/// Matrices whose 1-norm condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance used when checking that points lie in `[-1, 1]`.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RbfError {
    #[error("non-finite input to kernel evaluation")]
    NonFinite,
    #[error("shape parameter must be positive and finite, got {0}")]
    InvalidShape(f64),
    #[error("negative radial distance {0}")]
    NegativeDistance(f64),
    #[error("basis has no centers")]
    EmptyBasis,
    #[error("no evaluation points")]
    EmptyPoints,
    #[error("centers must be strictly increasing")]
    CentersNotIncreasing,
    #[error("point {0} lies outside [-1, 1]")]
    OutOfDomain(f64),
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{0} centers exceed the Gauss-Legendre layout limit")]
    TooManyCenters(usize),
    #[error("interpolation matrix is ill-conditioned (condition {condition:.3e})")]
    IllConditioned { condition: f64 },
}

/// Kernel family. All three are infinitely smooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KernelKind {
    /// `exp(-(eps r)^2)`
    #[default]
    Gaussian,
    /// `sqrt(1 + (eps r)^2)`
    Multiquadric,
    /// `1 / sqrt(1 + (eps r)^2)`
    InverseMultiquadric,
}

impl KernelKind {
    /// Kernel value without argument checks.
    #[inline]
    pub fn value(self, epsilon: f64, r: f64) -> f64 {
        let er2 = (epsilon * r) * (epsilon * r);
        match self {
            KernelKind::Gaussian => libm::exp(-er2),
            KernelKind::Multiquadric => libm::sqrt(1.0 + er2),
            KernelKind::InverseMultiquadric => 1.0 / libm::sqrt(1.0 + er2),
        }
    }

    /// `d rho / d r` without argument checks.
    #[inline]
    pub fn slope(self, epsilon: f64, r: f64) -> f64 {
        self.signed_slope(epsilon, r)
    }

    /// `d/dd rho(|d|)` for a signed offset `d`; smooth through `d = 0`.
    #[inline]
    fn signed_slope(self, epsilon: f64, d: f64) -> f64 {
        let e2 = epsilon * epsilon;
        let er2 = e2 * d * d;
        match self {
            KernelKind::Gaussian => -2.0 * e2 * d * libm::exp(-er2),
            KernelKind::Multiquadric => e2 * d / libm::sqrt(1.0 + er2),
            KernelKind::InverseMultiquadric => {
                let s = 1.0 + er2;
                -e2 * d / (s * libm::sqrt(s))
            }
        }
    }
}

fn check_kernel_args(epsilon: f64, r: f64) -> Result<(), RbfError> {
    if !epsilon.is_finite() || !r.is_finite() {
        return Err(RbfError::NonFinite);
    }
    if epsilon <= 0.0 {
        return Err(RbfError::InvalidShape(epsilon));
    }
    if r < 0.0 {
        return Err(RbfError::NegativeDistance(r));
    }
    Ok(())
}

/// Evaluates `rho(r)`.
pub fn eval_kernel(kind: KernelKind, epsilon: f64, r: f64) -> Result<f64, RbfError> {
    check_kernel_args(epsilon, r)?;
    Ok(kind.value(epsilon, r))
}

/// Evaluates `d rho / d r`. The chain rule `d phi_i / d tau = sign(tau - c_i) rho'(r)`
/// is left to the caller.
pub fn eval_kernel_derivative(kind: KernelKind, epsilon: f64, r: f64) -> Result<f64, RbfError> {
    check_kernel_args(epsilon, r)?;
    Ok(kind.slope(epsilon, r))
}

/// Placement of the centers of a default basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CenterLayout {
    /// Gauss-Legendre nodes of the same size as the basis.
    #[default]
    GaussLegendre,
    /// Equally spaced, including both endpoints.
    Uniform,
}

/// Value and derivative design matrices, `M x N` for `M` points.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub values: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    kind: KernelKind,
    epsilon: f64,
    centers: Vec<f64>,
}

impl RbfBasis {
    pub fn new(kind: KernelKind, epsilon: f64, centers: Vec<f64>) -> Result<Self, RbfError> {
        if !epsilon.is_finite() {
            return Err(RbfError::NonFinite);
        }
        if epsilon <= 0.0 {
            return Err(RbfError::InvalidShape(epsilon));
        }
        if centers.is_empty() {
            return Err(RbfError::EmptyBasis);
        }
        for &c in &centers {
            check_domain(c)?;
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RbfError::CentersNotIncreasing);
        }
        Ok(Self {
            kind,
            epsilon,
            centers,
        })
    }

    /// Basis of `n` functions centered on a standard layout.
    pub fn with_layout(
        kind: KernelKind,
        epsilon: f64,
        n: usize,
        layout: CenterLayout,
    ) -> Result<Self, RbfError> {
        if n == 0 {
            return Err(RbfError::EmptyBasis);
        }
        let centers = match layout {
            CenterLayout::GaussLegendre => lg_rule(n)
                .map_err(|_| RbfError::TooManyCenters(n))?
                .nodes()
                .to_vec(),
            CenterLayout::Uniform if n == 1 => alloc::vec![0.0],
            CenterLayout::Uniform => (0..n)
                .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self::new(kind, epsilon, centers)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `phi_i(tau)`
    #[inline]
    pub fn phi(&self, i: usize, tau: f64) -> f64 {
        self.kind.value(self.epsilon, tau - self.centers[i])
    }

    /// `d phi_i / d tau`
    #[inline]
    pub fn dphi(&self, i: usize, tau: f64) -> f64 {
        self.kind.signed_slope(self.epsilon, tau - self.centers[i])
    }

    /// `sum_i w_i phi_i(tau)`
    pub fn eval(&self, weights: &[f64], tau: f64) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.phi(i, tau))
            .sum()
    }

    /// `sum_i w_i phi_i'(tau)`
    pub fn eval_derivative(&self, weights: &[f64], tau: f64) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.dphi(i, tau))
            .sum()
    }

    /// `values[j][i] = phi_i(tau_j)`, `derivatives[j][i] = phi_i'(tau_j)`.
    pub fn design_matrices(&self, points: &[f64]) -> Result<DesignMatrices, RbfError> {
        if points.is_empty() {
            return Err(RbfError::EmptyPoints);
        }
        for &p in points {
            check_domain(p)?;
        }
        let (m, n) = (points.len(), self.len());
        let values = DMatrix::from_fn(m, n, |j, i| self.phi(i, points[j]));
        let derivatives = DMatrix::from_fn(m, n, |j, i| self.dphi(i, points[j]));
        Ok(DesignMatrices {
            values,
            derivatives,
        })
    }

    /// Kernel matrix at the centers, `A[j][i] = phi_i(c_j)`.
    pub fn center_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |j, i| self.phi(i, self.centers[j]))
    }

    /// Weights `w` with `sum_i w_i phi_i(node_j) = values_j` for every node.
    pub fn fit_interpolant(&self, nodes: &[f64], values: &[f64]) -> Result<Vec<f64>, RbfError> {
        let n = self.len();
        if nodes.len() != n {
            return Err(RbfError::DimensionMismatch {
                expected: n,
                actual: nodes.len(),
            });
        }
        if values.len() != n {
            return Err(RbfError::DimensionMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RbfError::NonFinite);
        }
        let phi = self.design_matrices(nodes)?.values;
        let fact = Factorized::new(phi.clone()).ok_or(RbfError::IllConditioned {
            condition: f64::INFINITY,
        })?;
        if fact.condition > MAX_CONDITION {
            return Err(RbfError::IllConditioned {
                condition: fact.condition,
            });
        }
        let w = fact.solve(values).ok_or(RbfError::IllConditioned {
            condition: f64::INFINITY,
        })?;
        let residual: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| phi[(j, i)] * w[i]).sum::<f64>() - values[j])
            .collect();
        // A well-conditioned solve that still misses the nodes is a conditioning failure.
        if inf_norm(&residual) > 1e-10 * (1.0 + inf_norm(values)) {
            return Err(RbfError::IllConditioned {
                condition: fact.condition,
            });
        }
        Ok(w)
    }
}

fn check_domain(p: f64) -> Result<(), RbfError> {
    if !p.is_finite() {
        return Err(RbfError::NonFinite);
    }
    if !(-1.0 - DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&p) {
        return Err(RbfError::OutOfDomain(p));
    }
    Ok(())
}
