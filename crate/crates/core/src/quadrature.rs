//! Gauss-Legendre quadrature on `[-1, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub const MAX_ORDER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("quadrature order {0} outside 1..={MAX_ORDER}")]
    OrderOutOfRange(usize),
    #[error("integrand is not finite at node {node}")]
    NonFinite { node: f64 },
}

/// Nodes in ascending order with their (positive) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `sum_j w_j f(tau_j)`
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> Result<f64, QuadratureError> {
        let mut acc = 0.0;
        for (x, w) in self.iter() {
            let v = f(x);
            if !v.is_finite() {
                return Err(QuadratureError::NonFinite { node: x });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Free-function form of [`QuadratureRule::integrate`].
pub fn integrate<F: FnMut(f64) -> f64>(
    rule: &QuadratureRule,
    f: F,
) -> Result<f64, QuadratureError> {
    rule.integrate(f)
}

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n' from P_n and P_{n-1}; the endpoint form avoids dividing by zero.
    let nf = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Legendre-Gauss nodes (roots of `P_n`) and weights.
pub fn lg_rule(n: usize) -> Result<QuadratureRule, QuadratureError> {
    if n == 0 || n > MAX_ORDER {
        return Err(QuadratureError::OrderOutOfRange(n));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    // Roots come in +/- pairs; compute the non-negative half and mirror.
    for i in 0..n.div_ceil(2) {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}
