//! Cholesky factorization with a diagonal jitter ladder.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Default first rung of the jitter ladder, relative to the mean diagonal.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Number of escalating jitter rungs tried after the unjittered attempt.
pub const JITTER_RUNGS: usize = 6;

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L L^T`, i.e. the input matrix plus `jitter_used * I`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_lower_mut(&mut x);
        x
    }

    pub fn solve_lower_mut(&self, b: &mut DMatrix<f64>) {
        // diagonal is strictly positive, so the substitution cannot fail
        let ok = self.lower.solve_lower_triangular_mut(b);
        debug_assert!(ok);
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let ok = self.lower.solve_lower_triangular_mut(&mut x);
        debug_assert!(ok);
        x
    }

    /// `(L L^T)^{-1} b` by forward then backward substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_lower_mut(&mut x);
        let ok = self.lower.tr_solve_lower_triangular_mut(&mut x);
        debug_assert!(ok);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let ok = self.lower.solve_lower_triangular_mut(&mut x) && self.lower.tr_solve_lower_triangular_mut(&mut x);
        debug_assert!(ok);
        x
    }
}

fn try_factor(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let mut m = a.clone();
    if jitter > 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
    }
    let l = Cholesky::new(m)?.unpack();
    let diag_ok = l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite());
    diag_ok.then_some(l)
}

/// Factorizes a symmetric matrix, adding `base_jitter * mean(diag)` to the
/// diagonal (escalating tenfold per rung) when the plain factorization fails.
pub fn chol_jitter(a: &DMatrix<f64>, base_jitter: f64) -> Result<CholeskyFactor> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims("chol_jitter: square matrix columns", n, a.ncols()));
    }
    if !(base_jitter >= 0.0 && base_jitter.is_finite()) {
        return Err(Error::param("base_jitter", "must be nonnegative and finite"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            if (x - y).abs() > 1e-10 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::InvalidData(format!(
                    "chol_jitter: matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if let Some(lower) = try_factor(a, 0.0) {
        return Ok(CholeskyFactor {
            lower,
            jitter_used: 0.0,
        });
    }
    let mean_diag = if n == 0 {
        1.0
    } else {
        (a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE)
    };
    let mut jitter = base_jitter * mean_diag;
    for _ in 0..JITTER_RUNGS {
        if let Some(lower) = try_factor(a, jitter) {
            return Ok(CholeskyFactor {
                lower,
                jitter_used: jitter,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: jitter / 10.0 })
}
