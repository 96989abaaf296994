//! Squared-exponential kernel with automatic relevance determination.
//!
//! `k(a, b) = v * exp(-0.5 * sum_q ((a_q - b_q) / l_q)^2)`
//!
//! Lengthscales and the signal variance are stored as logarithms so that
//! gradient steps can move them freely without leaving the positive reals.
//! A dimension with a very large lengthscale contributes nothing to the
//! distance; `1 / l_q^2` is reported as that dimension's relevance.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    log_lengthscales: Vec<f64>,
    log_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: &[f64], signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::param("lengthscales", "need at least one dimension"));
        }
        for (q, &l) in lengthscales.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param(
                    format!("lengthscales[{q}]"),
                    format!("must be positive and finite, got {l}"),
                ));
            }
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::param(
                "signal_variance",
                format!("must be positive and finite, got {signal_variance}"),
            ));
        }
        Ok(Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_variance: signal_variance.ln(),
        })
    }

    /// Unit lengthscales and unit variance in `dim` dimensions.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(&vec![lengthscale; dim], signal_variance)
    }

    pub fn from_log(log_lengthscales: Vec<f64>, log_variance: f64) -> Result<Self> {
        let p = Self {
            log_lengthscales,
            log_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_lengthscales.is_empty() {
            return Err(Error::param("lengthscales", "need at least one dimension"));
        }
        let ok = |x: f64| x.exp() > 0.0 && x.exp().is_finite();
        if !self.log_lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::param("lengthscales", "must be positive and finite"));
        }
        if !ok(self.log_variance) {
            return Err(Error::param("signal_variance", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn log_lengthscales(&self) -> &[f64] {
        &self.log_lengthscales
    }

    pub fn log_variance(&self) -> f64 {
        self.log_variance
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_variance.exp()
    }

    /// Per-dimension relevance, `1 / l_q^2`.
    pub fn relevance(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    pub(crate) fn log_lengthscales_mut(&mut self) -> &mut [f64] {
        &mut self.log_lengthscales
    }

    pub(crate) fn set_log_variance(&mut self, v: f64) {
        self.log_variance = v;
    }

    /// `1 / l_q^2` for each dimension, the precision used in the exponent.
    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.relevance()
    }

    /// Kernel value for two slices already known to have length `dim()`.
    #[inline]
    pub(crate) fn eval_unchecked(
        &self,
        a: impl Iterator<Item = f64>,
        b: impl Iterator<Item = f64>,
        inv_sq: &[f64],
    ) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), w) in a.zip(b).zip(inv_sq) {
            let d = x - y;
            r2 += d * d * w;
        }
        self.signal_variance() * (-0.5 * r2).exp()
    }
}

/// Kernel value between two latent points.
pub fn ard_rbf(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::dims("ard_rbf: second point length", x1.len(), x2.len()));
    }
    if x1.len() != params.dim() {
        return Err(Error::dims("ard_rbf: lengthscale count", params.dim(), x1.len()));
    }
    let inv_sq = params.inv_sq_lengthscales();
    Ok(params.eval_unchecked(x1.iter().copied(), x2.iter().copied(), &inv_sq))
}

/// Gradient of `ard_rbf` with respect to the log-lengthscales.
pub fn ard_rbf_grad_log_lengthscales(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    let k = ard_rbf(x1, x2, params)?;
    let inv_sq = params.inv_sq_lengthscales();
    Ok(x1
        .iter()
        .zip(x2)
        .zip(&inv_sq)
        .map(|((a, b), w)| k * (a - b) * (a - b) * w)
        .collect())
}

/// Identifies the point set a Gram matrix was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PointSetId(u64);

impl PointSetId {
    pub fn of(points: &DMatrix<f64>) -> Self {
        let mut h = DefaultHasher::new();
        points.nrows().hash(&mut h);
        points.ncols().hash(&mut h);
        for v in points.iter() {
            v.to_bits().hash(&mut h);
        }
        PointSetId(h.finish())
    }
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub row_inputs: PointSetId,
    pub col_inputs: PointSetId,
}

impl GramMatrix {
    pub fn is_self_gram(&self) -> bool {
        self.row_inputs == self.col_inputs
    }
}

/// Gram matrix between the rows of `rows` and the rows of `cols`.
pub fn gram(rows: &DMatrix<f64>, cols: &DMatrix<f64>, params: &KernelParams) -> Result<GramMatrix> {
    if rows.ncols() != params.dim() {
        return Err(Error::dims("gram: row point dimension", params.dim(), rows.ncols()));
    }
    if cols.ncols() != params.dim() {
        return Err(Error::dims("gram: column point dimension", params.dim(), cols.ncols()));
    }
    Ok(GramMatrix {
        values: gram_values(rows, cols, params),
        row_inputs: PointSetId::of(rows),
        col_inputs: PointSetId::of(cols),
    })
}

pub(crate) fn gram_values(rows: &DMatrix<f64>, cols: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
    let inv_sq = params.inv_sq_lengthscales();
    let var = params.signal_variance();
    let q = params.dim();
    let mut out = DMatrix::zeros(rows.nrows(), cols.nrows());
    for j in 0..cols.nrows() {
        for i in 0..rows.nrows() {
            let mut r2 = 0.0;
            for d in 0..q {
                let diff = rows[(i, d)] - cols[(j, d)];
                r2 += diff * diff * inv_sq[d];
            }
            out[(i, j)] = var * (-0.5 * r2).exp();
        }
    }
    out
}

/// Gradients of a scalar objective that depends on a Gram matrix.
pub(crate) struct GramGrad {
    pub rows: DMatrix<f64>,
    pub cols: DMatrix<f64>,
    pub log_lengthscales: Vec<f64>,
    pub log_variance: f64,
}

/// Pulls `d obj / d K` (same shape as `k`) back onto the inputs and the
/// kernel's log-parameters. `k` must hold the kernel values without jitter.
pub(crate) fn gram_backward(
    rows: &DMatrix<f64>,
    cols: &DMatrix<f64>,
    params: &KernelParams,
    k: &DMatrix<f64>,
    gbar: &DMatrix<f64>,
) -> GramGrad {
    let inv_sq = params.inv_sq_lengthscales();
    let q = params.dim();
    let mut g_rows = DMatrix::zeros(rows.nrows(), q);
    let mut g_cols = DMatrix::zeros(cols.nrows(), q);
    let mut g_ll = vec![0.0; q];
    let mut g_lv = 0.0;
    for j in 0..cols.nrows() {
        for i in 0..rows.nrows() {
            let w = gbar[(i, j)] * k[(i, j)];
            if w == 0.0 {
                continue;
            }
            g_lv += w;
            for d in 0..q {
                let diff = rows[(i, d)] - cols[(j, d)];
                let t = w * diff * inv_sq[d];
                g_rows[(i, d)] -= t;
                g_cols[(j, d)] += t;
                g_ll[d] += t * diff;
            }
        }
    }
    GramGrad {
        rows: g_rows,
        cols: g_cols,
        log_lengthscales: g_ll,
        log_variance: g_lv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_distance_returns_variance() {
        let p = KernelParams::new(&[0.7, 2.0], 3.5).unwrap();
        let x = [0.3, -1.2];
        assert_eq!(ard_rbf(&x, &x, &p).unwrap(), 3.5);
    }

    #[test]
    fn unit_distance_unit_lengthscale() {
        let p = KernelParams::new(&[1.0], 1.0).unwrap();
        assert_relative_eq!(
            ard_rbf(&[0.0], &[1.0], &p).unwrap(),
            0.606_530_659_712_633_4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn huge_lengthscale_switches_dimension_off() {
        let p = KernelParams::new(&[1.0, 1e6], 2.0).unwrap();
        let k = ard_rbf(&[0.0, 3.0], &[1.0, 3.0], &p).unwrap();
        assert_relative_eq!(k, 2.0 * (-0.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_reported() {
        let p = KernelParams::new(&[1.0, 1.0], 1.0).unwrap();
        match ard_rbf(&[0.0, 1.0], &[1.0], &p) {
            Err(Error::DimensionMismatch { expected, found, .. }) => {
                assert_eq!((expected, found), (2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ard_rbf(&[0.0], &[1.0], &p).is_err());
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(KernelParams::new(&[1.0, 0.0], 1.0).is_err());
        assert!(KernelParams::new(&[1.0], -1.0).is_err());
        assert!(KernelParams::new(&[], 1.0).is_err());
    }

    #[test]
    fn single_point_gram() {
        let p = KernelParams::new(&[1.3], 0.4).unwrap();
        let x = DMatrix::from_row_slice(1, 1, &[0.2]);
        let g = gram(&x, &x, &p).unwrap();
        assert!(g.is_self_gram());
        assert_eq!(g.values.shape(), (1, 1));
        assert_eq!(g.values[(0, 0)], 0.4);
    }

    #[test]
    fn self_gram_symmetric_with_variance_diagonal() {
        let p = KernelParams::new(&[0.5, 1.5, 3.0], 1.7).unwrap();
        let x = DMatrix::from_fn(9, 3, |i, j| ((i * 7 + j * 3) as f64).sin() * 2.0);
        let g = gram(&x, &x, &p).unwrap();
        for i in 0..9 {
            assert_eq!(g.values[(i, i)], 1.7);
            for j in 0..9 {
                assert!((g.values[(i, j)] - g.values[(j, i)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gram_eigenvalues_nonnegative() {
        // Oracle: nalgebra's symmetric eigen-solver, independent of the gram code.
        let p = KernelParams::new(&[0.8, 1.1], 1.0).unwrap();
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[0.1, -0.4, 1.3, 0.2, -0.7, 0.9, 0.05, -0.35, 2.1, 1.7, -1.4, -1.1],
        );
        let g = gram(&x, &x, &p).unwrap();
        let eig = g.values.clone().symmetric_eigen().eigenvalues;
        let max = eig.max();
        assert!(eig.iter().all(|&e| e >= -1e-8 * max), "{eig}");
    }

    #[test]
    fn gram_dimension_mismatch() {
        let p = KernelParams::new(&[1.0, 1.0], 1.0).unwrap();
        let x = DMatrix::zeros(3, 2);
        let y = DMatrix::zeros(3, 3);
        assert!(gram(&x, &y, &p).is_err());
    }

    #[test]
    fn gram_backward_matches_finite_differences() {
        let p = KernelParams::new(&[0.7, 1.4], 1.3).unwrap();
        let rows = DMatrix::from_row_slice(3, 2, &[0.1, 0.5, -0.3, 0.8, 1.0, -0.2]);
        let cols = DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.6, -0.5]);
        let gbar = DMatrix::from_row_slice(3, 2, &[0.3, -1.0, 0.7, 0.2, -0.4, 0.9]);
        let obj =
            |r: &DMatrix<f64>, c: &DMatrix<f64>, p: &KernelParams| gram_values(r, c, p).component_mul(&gbar).sum();
        let k = gram_values(&rows, &cols, &p);
        let g = gram_backward(&rows, &cols, &p, &k, &gbar);
        let h = 1e-6;
        for i in 0..3 {
            for d in 0..2 {
                let mut a = rows.clone();
                let mut b = rows.clone();
                a[(i, d)] += h;
                b[(i, d)] -= h;
                let fd = (obj(&a, &cols, &p) - obj(&b, &cols, &p)) / (2.0 * h);
                assert_relative_eq!(g.rows[(i, d)], fd, epsilon = 1e-8);
            }
        }
        for j in 0..2 {
            for d in 0..2 {
                let mut a = cols.clone();
                let mut b = cols.clone();
                a[(j, d)] += h;
                b[(j, d)] -= h;
                let fd = (obj(&rows, &a, &p) - obj(&rows, &b, &p)) / (2.0 * h);
                assert_relative_eq!(g.cols[(j, d)], fd, epsilon = 1e-8);
            }
        }
        let mut pv = p.clone();
        pv.set_log_variance(p.log_variance() + h);
        let mut mv = p.clone();
        mv.set_log_variance(p.log_variance() - h);
        let fd = (obj(&rows, &cols, &pv) - obj(&rows, &cols, &mv)) / (2.0 * h);
        assert_relative_eq!(g.log_variance, fd, epsilon = 1e-8);
    }

    fn point(q: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn symmetric_in_arguments(x in point(3), y in point(3), ls in prop::collection::vec(0.1f64..10.0, 3), v in 0.01f64..10.0) {
            let p = KernelParams::new(&ls, v).unwrap();
            let a = ard_rbf(&x, &y, &p).unwrap();
            let b = ard_rbf(&y, &x, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
            prop_assert!(a <= v && a >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn log_lengthscale_gradient_matches_central_differences(
            x in point(3), y in point(3),
            ls in prop::collection::vec(0.3f64..5.0, 3), v in 0.1f64..5.0,
        ) {
            let p = KernelParams::new(&ls, v).unwrap();
            let g = ard_rbf_grad_log_lengthscales(&x, &y, &p).unwrap();
            let h = 1e-5;
            for (q, &gq) in g.iter().enumerate() {
                let mut plus = p.clone();
                plus.log_lengthscales_mut()[q] += h;
                let mut minus = p.clone();
                minus.log_lengthscales_mut()[q] -= h;
                let fd = (ard_rbf(&x, &y, &plus).unwrap() - ard_rbf(&x, &y, &minus).unwrap()) / (2.0 * h);
                // rounding in the difference scales with k itself, so the
                // denominator never drops below a small fraction of it
                let k = ard_rbf(&x, &y, &p).unwrap();
                let scale = gq.abs().max(fd.abs()).max(1e-3 * k);
                if scale > 1e-12 {
                    prop_assert!((gq - fd).abs() / scale <= 1e-6, "q={} analytic={} fd={}", q, gq, fd);
                }
            }
        }
    }
}
