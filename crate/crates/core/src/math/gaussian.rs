//! Gaussian divergences and reparameterized sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::chol::{chol_jitter, CholeskyFactor, DEFAULT_JITTER};
use crate::error::{Error, Result};

/// `KL(N(mu, diag(scale^2)) || N(0, I))`.
pub fn kl_diag_standard(mu: &[f64], scale: &[f64]) -> Result<f64> {
    if mu.len() != scale.len() {
        return Err(Error::dims("kl_diag_standard: scale length", mu.len(), scale.len()));
    }
    let mut kl = 0.0;
    for (i, (&m, &s)) in mu.iter().zip(scale).enumerate() {
        if !(s > 0.0) {
            return Err(Error::param(
                format!("scale[{i}]"),
                format!("must be positive, got {s}"),
            ));
        }
        kl += kl_diag_term(m, s.ln());
    }
    Ok(kl)
}

/// One coordinate of the diagonal KL in terms of the log-scale.
#[inline]
pub(crate) fn kl_diag_term(mu: f64, log_scale: f64) -> f64 {
    0.5 * (mu * mu + (2.0 * log_scale).exp() - 1.0 - 2.0 * log_scale)
}

/// `KL(N(m, S) || N(0, K))`, computed from Cholesky factors.
pub fn kl_full_vs_prior(m: &[f64], s: &DMatrix<f64>, k_prior: &DMatrix<f64>) -> Result<f64> {
    let n = m.len();
    if s.shape() != (n, n) {
        return Err(Error::dims("kl_full_vs_prior: S rows", n, s.nrows()));
    }
    if k_prior.shape() != (n, n) {
        return Err(Error::dims("kl_full_vs_prior: K rows", n, k_prior.nrows()));
    }
    let ls = chol_jitter(s, DEFAULT_JITTER)?;
    let lk = chol_jitter(k_prior, DEFAULT_JITTER)?;
    Ok(kl_factor_vs_prior(&DVector::from_column_slice(m), ls.lower(), &lk))
}

/// KL with `S = s_factor s_factor^T` and the prior given by its factor.
pub(crate) fn kl_factor_vs_prior(m: &DVector<f64>, s_factor: &DMatrix<f64>, k: &CholeskyFactor) -> f64 {
    let n = m.len() as f64;
    let a = k.solve_lower(s_factor);
    let trace = a.norm_squared();
    let alpha = k.solve_lower_vec(m);
    let maha = alpha.norm_squared();
    let logdet_s = 2.0 * s_factor.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    0.5 * (trace + maha - n + k.log_det() - logdet_s)
}

/// `mu + scale * eps`, elementwise.
pub fn reparam_sample(mu: &[f64], scale: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if scale.len() != mu.len() {
        return Err(Error::dims("reparam_sample: scale length", mu.len(), scale.len()));
    }
    if eps.len() != mu.len() {
        return Err(Error::dims("reparam_sample: eps length", mu.len(), eps.len()));
    }
    Ok(mu.iter().zip(scale).zip(eps).map(|((m, s), e)| m + s * e).collect())
}

pub(crate) fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // filled row by row so the draw order does not depend on storage layout
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = rng.sample(StandardNormal);
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
