//! Cholesky factorisation with a rank-revealing pivot test and a jitter
//! retry policy.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

/// Jitter retry schedule: `1e-8 * trace / n`, then x10, x10, x10.
pub const JITTER_BASE: f64 = 1e-8;
pub const JITTER_RETRIES: usize = 3;

impl Cholesky {
    /// Factorises `a`, failing if any pivot is non-positive relative to the
    /// largest diagonal entry (`pivot <= n * eps * max_diag`). Exactly
    /// singular matrices such as duplicated noise-free rows are rejected even
    /// when rounding leaves a tiny positive pivot.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if n == 0 {
            return Some(Cholesky { l: DMatrix::zeros(0, 0) });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(*v));
        let tol = n as f64 * f64::EPSILON * max_diag;
        let l = nalgebra::Cholesky::new(a.clone())?.unpack();
        if l.diagonal().iter().any(|d| d * d <= tol) {
            return None;
        }
        Some(Cholesky { l })
    }

    /// Tries an exact factorisation first, then adds diagonal jitter
    /// following [`JITTER_BASE`] / [`JITTER_RETRIES`]. Returns the factor and
    /// the jitter that was added.
    pub fn with_jitter(a: &DMatrix<f64>) -> Option<(Self, f64)> {
        if let Some(c) = Self::new(a) {
            return Some((c, 0.0));
        }
        let n = a.nrows() as f64;
        let mut jitter = JITTER_BASE * a.trace().abs().max(f64::MIN_POSITIVE) / n;
        for _ in 0..=JITTER_RETRIES {
            let mut b = a.clone();
            for i in 0..b.nrows() {
                b[(i, i)] += jitter;
            }
            if let Some(c) = Self::new(&b) {
                return Some((c, jitter));
            }
            jitter *= 10.0;
        }
        None
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `A^{-1} b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower_vec(b);
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.solve_lower(b);
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_log_det() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let c = Cholesky::new(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = c.solve_vec(&b);
        assert!((&a * &x - &b).norm() < 1e-12);
        assert!((c.log_det() - a.determinant().ln()).abs() < 1e-12);
        let inv = c.inverse();
        assert!((&a * inv - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn duplicated_rows_are_rejected_then_rescued_by_jitter() {
        let v = 0.861_527_706_796_296_4;
        let a = DMatrix::from_element(2, 2, v);
        assert!(Cholesky::new(&a).is_none());
        let (_, jitter) = Cholesky::with_jitter(&a).unwrap();
        assert!(jitter > 0.0 && jitter < 1e-5);
        let (_, none) = Cholesky::with_jitter(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(none, 0.0);
    }
}
