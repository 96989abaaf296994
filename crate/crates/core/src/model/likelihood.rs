//! Expected log-likelihood terms for the two observation paths.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::state::NoiseParams;
use super::svgp::MarginalGaussians;
use crate::error::{Error, Result};
use crate::math::gaussian::{sigmoid, softplus};

/// Below this marginal variance the discrete path drops the variance
/// gradient, whose `1 / sqrt(v)` factor would otherwise blow up.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Value and gradients of an expected log-likelihood term.
pub(crate) struct EllGrad {
    pub value: f64,
    pub g_mean: DMatrix<f64>,
    pub g_var: DMatrix<f64>,
    /// Only populated for the continuous path.
    pub g_log_sigma: Vec<f64>,
}

fn check_shapes(y: &DMatrix<f64>, marginals: &MarginalGaussians) -> Result<()> {
    if marginals.mean.shape() != y.shape() {
        return Err(Error::dims(
            "likelihood: marginal rows",
            y.nrows(),
            marginals.mean.nrows(),
        ));
    }
    if marginals.variance.shape() != y.shape() {
        return Err(Error::dims(
            "likelihood: variance rows",
            y.nrows(),
            marginals.variance.nrows(),
        ));
    }
    Ok(())
}

fn check_noise(y: &DMatrix<f64>, noise: &NoiseParams) -> Result<()> {
    if noise.log_sigma.len() != y.ncols() {
        return Err(Error::dims(
            "likelihood: noise length",
            y.ncols(),
            noise.log_sigma.len(),
        ));
    }
    if let Some(s) = noise.sigma().into_iter().find(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param(
            "noise.sigma",
            format!("must be positive and finite, got {s}"),
        ));
    }
    Ok(())
}

/// `sum_{i,d} E_q[log N(y_id | f, sigma_d^2)]` in closed form.
pub fn ell_continuous(y: &DMatrix<f64>, marginals: &MarginalGaussians, noise: &NoiseParams) -> Result<f64> {
    check_shapes(y, marginals)?;
    check_noise(y, noise)?;
    Ok(ell_continuous_grad(y, marginals, noise).value)
}

/// Monte-Carlo estimate of the same expectation, one `f` draw per entry of
/// each matrix in `f_eps`.
pub fn ell_continuous_mc(
    y: &DMatrix<f64>,
    marginals: &MarginalGaussians,
    noise: &NoiseParams,
    f_eps: &[DMatrix<f64>],
) -> Result<f64> {
    check_shapes(y, marginals)?;
    check_noise(y, noise)?;
    if f_eps.is_empty() {
        return Err(Error::param("f_eps", "need at least one sample"));
    }
    let sigma = noise.sigma();
    let mut total = 0.0;
    for eps in f_eps {
        if eps.shape() != y.shape() {
            return Err(Error::dims("ell_continuous_mc: eps rows", y.nrows(), eps.nrows()));
        }
        for j in 0..y.ncols() {
            let s2 = sigma[j] * sigma[j];
            for i in 0..y.nrows() {
                let f = marginals.mean[(i, j)] + marginals.variance[(i, j)].max(0.0).sqrt() * eps[(i, j)];
                let r = y[(i, j)] - f;
                total += -0.5 * (2.0 * PI * s2).ln() - r * r / (2.0 * s2);
            }
        }
    }
    Ok(total / f_eps.len() as f64)
}

pub(crate) fn ell_continuous_grad(y: &DMatrix<f64>, marginals: &MarginalGaussians, noise: &NoiseParams) -> EllGrad {
    let (b, d) = y.shape();
    let mut g_mean = DMatrix::zeros(b, d);
    let mut g_var = DMatrix::zeros(b, d);
    let mut g_log_sigma = vec![0.0; d];
    let mut value = 0.0;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    for j in 0..d {
        let log_s = noise.log_sigma[j];
        let inv_s2 = (-2.0 * log_s).exp();
        for i in 0..b {
            let r = y[(i, j)] - marginals.mean[(i, j)];
            let sq = r * r + marginals.variance[(i, j)].max(0.0);
            value += -half_log_2pi - log_s - 0.5 * sq * inv_s2;
            g_mean[(i, j)] = r * inv_s2;
            g_var[(i, j)] = -0.5 * inv_s2;
            g_log_sigma[j] += -1.0 + sq * inv_s2;
        }
    }
    EllGrad {
        value,
        g_mean,
        g_var,
        g_log_sigma,
    }
}

/// Monte-Carlo estimate of `sum_{i,k} E_q[log Bernoulli(y_ik | sigmoid(f))]`,
/// averaging over the draws in `f_eps` (one `B x K` matrix per draw).
pub fn ell_discrete(y: &DMatrix<f64>, marginals: &MarginalGaussians, f_eps: &[DMatrix<f64>]) -> Result<f64> {
    check_shapes(y, marginals)?;
    if f_eps.is_empty() {
        return Err(Error::param("f_eps", "need at least one sample"));
    }
    if let Some(e) = f_eps.iter().find(|e| e.shape() != y.shape()) {
        return Err(Error::dims("ell_discrete: eps rows", y.nrows(), e.nrows()));
    }
    Ok(ell_discrete_grad(y, marginals, f_eps).value)
}

pub(crate) fn ell_discrete_grad(y: &DMatrix<f64>, marginals: &MarginalGaussians, f_eps: &[DMatrix<f64>]) -> EllGrad {
    let (b, k) = y.shape();
    let s = f_eps.len() as f64;
    let mut g_mean = DMatrix::zeros(b, k);
    let mut g_var = DMatrix::zeros(b, k);
    let mut value = 0.0;
    for j in 0..k {
        for i in 0..b {
            let target = y[(i, j)];
            let mu = marginals.mean[(i, j)];
            let v = marginals.variance[(i, j)].max(0.0);
            let sd = v.sqrt();
            let (mut val, mut gm, mut gsd) = (0.0, 0.0, 0.0);
            for eps in f_eps {
                let e = eps[(i, j)];
                let f = mu + sd * e;
                // log Bernoulli(y | sigmoid(f)) = y f - log(1 + e^f)
                val += target * f - softplus(f);
                let r = target - sigmoid(f);
                gm += r;
                gsd += r * e;
            }
            value += val / s;
            g_mean[(i, j)] = gm / s;
            g_var[(i, j)] = if v < VARIANCE_FLOOR { 0.0 } else { gsd / s / (2.0 * sd) };
        }
    }
    EllGrad {
        value,
        g_mean,
        g_var,
        g_log_sigma: Vec::new(),
    }
}
