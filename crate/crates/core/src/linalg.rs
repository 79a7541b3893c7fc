use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// LU factorizations of a square matrix and its transpose, together with
/// the 1-norm condition number.
#[derive(Clone, Debug)]
pub(crate) struct Factorized {
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
    pub condition: f64,
}

impl Factorized {
    /// Returns `None` when the matrix is exactly singular.
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        let norm = norm_1(&m);
        let lu_t = m.transpose().lu();
        let lu = m.lu();
        let inv = lu.try_inverse()?;
        let condition = norm * norm_1(&inv);
        if !condition.is_finite() {
            return None;
        }
        Some(Self {
            lu,
            lu_t,
            condition,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        self.lu.solve(&b).map(|x| x.as_slice().to_vec())
    }

    /// Solves `X A = B` row by row (`A^T x_r = b_r`).
    pub fn solve_right(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let xt = self.lu_t.solve(&b.transpose())?;
        Some(xt.transpose())
    }
}

pub(crate) fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
