//! The five-term evidence lower bound and its exact gradient.
//!
//! ```text
//! ELBO = ELL_disc + ELL_cont - KL_u_disc - KL_u_cont - KL_x
//! ```
//!
//! One latent draw per batch point (reparameterized), a closed-form
//! continuous ELL, and a Monte-Carlo discrete ELL over
//! `mc_samples_discrete` function draws. Both ELLs are scaled by
//! `N / |batch|`; the KL terms are not.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::likelihood::{ell_continuous_grad, ell_discrete_grad};
use super::state::{push_lower, push_row_major, LatentVariational, ModelState, ParamGroup};
use super::svgp::{GpPath, PathGrad};
use crate::data::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::math::gaussian::{kl_diag_term, standard_normal_matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    pub ell_disc: f64,
    pub ell_cont: f64,
    pub kl_u_disc: f64,
    pub kl_u_cont: f64,
    pub kl_x: f64,
    pub total: f64,
}

impl ElboBreakdown {
    pub fn from_terms(ell_disc: f64, ell_cont: f64, kl_u_disc: f64, kl_u_cont: f64, kl_x: f64) -> Self {
        Self {
            ell_disc,
            ell_cont,
            kl_u_disc,
            kl_u_cont,
            kl_x,
            total: ell_disc + ell_cont - kl_u_disc - kl_u_cont - kl_x,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.ell_disc,
            self.ell_cont,
            self.kl_u_disc,
            self.kl_u_cont,
            self.kl_x,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Frozen standard-normal draws for one ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    /// `|batch| x Q`, one latent draw per batch point.
    pub x_eps: DMatrix<f64>,
    /// One `|batch| x K` matrix per discrete function sample.
    pub f_eps: Vec<DMatrix<f64>>,
}

impl ElboNoise {
    pub fn draw<R: Rng>(rng: &mut R, batch: usize, q: usize, k: usize, samples: usize) -> Self {
        let x_eps = standard_normal_matrix(rng, batch, q);
        let f_eps = (0..samples).map(|_| standard_normal_matrix(rng, batch, k)).collect();
        Self { x_eps, f_eps }
    }

    pub fn from_seed(seed: u64, batch: usize, q: usize, k: usize, samples: usize) -> Self {
        Self::draw(&mut ChaCha8Rng::seed_from_u64(seed), batch, q, k, samples)
    }
}

/// Gradient of the ELBO in the same packing as [`ModelState::pack`].
#[derive(Debug, Clone)]
pub struct ModelGradient {
    pub mu: DMatrix<f64>,
    pub log_scale: DMatrix<f64>,
    pub(crate) cont: PathGrad,
    pub(crate) disc: PathGrad,
    pub log_sigma: Vec<f64>,
}

impl ModelGradient {
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::new();
        push_row_major(&mut out, &self.mu);
        push_row_major(&mut out, &self.log_scale);
        for p in [&self.cont, &self.disc] {
            push_row_major(&mut out, &p.z);
            push_row_major(&mut out, &p.m);
            for s in &p.s {
                push_lower(&mut out, s, false);
            }
        }
        for p in [&self.cont, &self.disc] {
            out.extend_from_slice(&p.log_lengthscales);
            out.push(p.log_variance);
        }
        out.extend_from_slice(&self.log_sigma);
        out
    }
}

/// `mu + exp(log_scale) * eps`, elementwise.
pub fn sample_latent(latent: &LatentVariational, eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if eps.shape() != latent.mu.shape() {
        return Err(Error::dims("sample_latent: eps rows", latent.n(), eps.nrows()));
    }
    Ok(latent
        .mu
        .zip_zip_map(&latent.log_scale, eps, |m, ls, e| m + ls.exp() * e))
}

fn check_inputs(state: &ModelState, data: &Dataset, batch: &[usize]) -> Result<()> {
    if data.n() != state.n() {
        return Err(Error::dims("elbo: dataset rows vs latent rows", state.n(), data.n()));
    }
    if data.d() != state.d() {
        return Err(Error::dims("elbo: feature count", state.d(), data.d()));
    }
    if data.k() != state.k() {
        return Err(Error::dims("elbo: class count", state.k(), data.k()));
    }
    if batch.is_empty() {
        return Err(Error::param("batch", "must not be empty"));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= data.n()) {
        return Err(Error::param("batch", format!("index {i} out of range")));
    }
    Ok(())
}

fn check_noise(state: &ModelState, batch: &[usize], noise: &ElboNoise) -> Result<()> {
    if noise.x_eps.shape() != (batch.len(), state.q()) {
        return Err(Error::dims("elbo: x_eps rows", batch.len(), noise.x_eps.nrows()));
    }
    if noise.f_eps.is_empty() {
        return Err(Error::param("f_eps", "need at least one discrete sample"));
    }
    if let Some(e) = noise.f_eps.iter().find(|e| e.shape() != (batch.len(), state.k())) {
        return Err(Error::dims("elbo: f_eps rows", batch.len(), e.nrows()));
    }
    Ok(())
}

/// ELBO on `batch` with noise drawn from `seed`. Deterministic in
/// `(state, data, batch, seed)`.
pub fn elbo(state: &ModelState, data: &Dataset, batch: &[usize], seed: u64) -> Result<ElboBreakdown> {
    let noise = ElboNoise::from_seed(
        seed,
        batch.len(),
        state.q(),
        state.k(),
        state.config.mc_samples_discrete.max(1),
    );
    elbo_with_noise(state, data, batch, &noise)
}

pub fn elbo_with_noise(
    state: &ModelState,
    data: &Dataset,
    batch: &[usize],
    noise: &ElboNoise,
) -> Result<ElboBreakdown> {
    Ok(evaluate(state, data, batch, noise, false)?.0)
}

pub fn elbo_and_grad(
    state: &ModelState,
    data: &Dataset,
    batch: &[usize],
    noise: &ElboNoise,
) -> Result<(ElboBreakdown, ModelGradient)> {
    let (b, g) = evaluate(state, data, batch, noise, true)?;
    Ok((b, g.expect("gradient requested")))
}

fn evaluate(
    state: &ModelState,
    data: &Dataset,
    batch: &[usize],
    noise: &ElboNoise,
    want_grad: bool,
) -> Result<(ElboBreakdown, Option<ModelGradient>)> {
    check_inputs(state, data, batch)?;
    check_noise(state, batch, noise)?;
    let (n, q, bsz) = (state.n(), state.q(), batch.len());
    let scale = n as f64 / bsz as f64;
    let lat = &state.latent;

    let mut x = DMatrix::zeros(bsz, q);
    for (r, &i) in batch.iter().enumerate() {
        for j in 0..q {
            x[(r, j)] = lat.mu[(i, j)] + lat.log_scale[(i, j)].exp() * noise.x_eps[(r, j)];
        }
    }
    let y_cont = DMatrix::from_fn(bsz, state.d(), |r, j| data.y_continuous()[(batch[r], j)]);
    let batch_labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
    let y_disc = one_hot(&batch_labels, state.k());

    let cont = GpPath::new(&state.inducing_cont, &state.kernel_cont)?;
    let disc = GpPath::new(&state.inducing_disc, &state.kernel_disc)?;
    let fwd_c = cont.forward(&x);
    let fwd_d = disc.forward(&x);
    let ell_c = ell_continuous_grad(&y_cont, &fwd_c.marginals, &state.noise);
    let ell_d = ell_discrete_grad(&y_disc, &fwd_d.marginals, &noise.f_eps);

    let kl_x: f64 = lat
        .mu
        .iter()
        .zip(lat.log_scale.iter())
        .map(|(&m, &ls)| kl_diag_term(m, ls))
        .sum();
    let breakdown = ElboBreakdown::from_terms(scale * ell_d.value, scale * ell_c.value, disc.kl(), cont.kl(), kl_x);
    if !want_grad {
        return Ok((breakdown, None));
    }

    let gc = cont.backward(&x, &fwd_c, &(scale * &ell_c.g_mean), &(scale * &ell_c.g_var), -1.0);
    let gd = disc.backward(&x, &fwd_d, &(scale * &ell_d.g_mean), &(scale * &ell_d.g_var), -1.0);

    let mut g_mu = -lat.mu.clone();
    let mut g_ls = lat.log_scale.map(|ls| 1.0 - (2.0 * ls).exp());
    for (r, &i) in batch.iter().enumerate() {
        for j in 0..q {
            let gx = gc.x[(r, j)] + gd.x[(r, j)];
            g_mu[(i, j)] += gx;
            g_ls[(i, j)] += gx * noise.x_eps[(r, j)] * lat.log_scale[(i, j)].exp();
        }
    }
    let log_sigma = ell_c.g_log_sigma.iter().map(|g| scale * g).collect();
    Ok((
        breakdown,
        Some(ModelGradient {
            mu: g_mu,
            log_scale: g_ls,
            cont: gc,
            disc: gd,
            log_sigma,
        }),
    ))
}

/// Full-batch index set `0..n`.
pub fn full_batch(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Max-abs gradient per parameter group.
pub fn group_norms(state: &ModelState, grad: &[f64]) -> Vec<(ParamGroup, f64)> {
    state
        .layout()
        .into_iter()
        .map(|(g, r)| (g, grad[r].iter().fold(0.0f64, |a, v| a.max(v.abs()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{random_dataset, random_state};

    #[test]
    fn breakdown_identity_and_kl_signs() {
        for seed in 0..20 {
            let state = random_state(seed, 8, 3, 2, 4, 2);
            let data = random_dataset(seed, 8, 3, 2);
            let b = elbo(&state, &data, &full_batch(8), seed).unwrap();
            let sum = b.ell_disc + b.ell_cont - b.kl_u_disc - b.kl_u_cont - b.kl_x;
            assert!((b.total - sum).abs() <= 1e-10);
            assert!(b.kl_u_disc >= 0.0 && b.kl_u_cont >= 0.0 && b.kl_x >= 0.0);
        }
    }

    #[test]
    fn kl_x_vanishes_at_prior() {
        let mut state = random_state(3, 6, 2, 2, 3, 2);
        state.latent.mu.fill(0.0);
        state.latent.log_scale.fill(0.0);
        let data = random_dataset(3, 6, 2, 2);
        let b = elbo(&state, &data, &full_batch(6), 1).unwrap();
        assert_eq!(b.kl_x, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let state = random_state(4, 10, 3, 3, 4, 2);
        let data = random_dataset(4, 10, 3, 3);
        let batch = [1, 4, 7];
        let a = elbo(&state, &data, &batch, 77).unwrap();
        let b = elbo(&state, &data, &batch, 77).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        let c = elbo(&state, &data, &batch, 78).unwrap();
        assert_ne!(a.total, c.total);
    }

    #[test]
    fn minibatch_scaling_is_unbiased_for_continuous_term() {
        // With zero latent noise the continuous ELL is deterministic, and
        // the average over all singleton batches equals the full-batch value.
        let mut state = random_state(5, 6, 2, 2, 3, 2);
        state.latent.log_scale.fill(-40.0);
        let data = random_dataset(5, 6, 2, 2);
        let full = elbo(&state, &data, &full_batch(6), 0).unwrap().ell_cont;
        let avg: f64 = (0..6)
            .map(|i| elbo(&state, &data, &[i], 0).unwrap().ell_cont)
            .sum::<f64>()
            / 6.0;
        assert!((full - avg).abs() < 1e-9 * full.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let state = random_state(12, 6, 2, 2, 3, 2);
        let data = random_dataset(12, 6, 2, 2);
        let batch = full_batch(6);
        let noise = ElboNoise::from_seed(5, 6, 2, 2, 4);
        let (_, g) = elbo_and_grad(&state, &data, &batch, &noise).unwrap();
        let g = g.pack();
        let p0 = state.pack();
        let h = 1e-5;
        let mut s = state.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            s.unpack(&p).unwrap();
            let up = elbo_with_noise(&s, &data, &batch, &noise).unwrap().total;
            p[i] -= 2.0 * h;
            s.unpack(&p).unwrap();
            let dn = elbo_with_noise(&s, &data, &batch, &noise).unwrap().total;
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            assert!(err < 1e-5, "param {i}: analytic {} fd {fd}", g[i]);
        }
    }

    #[test]
    fn sample_latent_cases() {
        let state = random_state(2, 5, 2, 2, 3, 3);
        let lat = &state.latent;
        assert_eq!(sample_latent(lat, &DMatrix::zeros(5, 3)).unwrap(), lat.mu);
        let eps = DMatrix::from_fn(5, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        let a = sample_latent(lat, &eps).unwrap();
        let b = sample_latent(lat, &eps).unwrap();
        assert_eq!(a, b);
        let mut tight = lat.clone();
        tight.log_scale.fill(-800.0);
        assert_eq!(sample_latent(&tight, &eps).unwrap(), lat.mu);
        assert!(sample_latent(lat, &DMatrix::zeros(4, 3)).is_err());
    }

    /// Log evidence of a tiny model by importance sampling from the prior:
    /// X ~ N(0, I), the continuous path integrated exactly, the discrete
    /// path sampled from the GP prior.
    fn log_evidence_oracle(state: &ModelState, data: &Dataset, samples: usize) -> (f64, f64) {
        use rand_distr::{Distribution, StandardNormal};
        let n = data.n();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let k = |p: &crate::math::KernelParams, a: f64, b: f64| {
            p.signal_variance() * (-0.5 * (a - b).powi(2) / p.lengthscales()[0].powi(2)).exp()
        };
        let sigma2 = state.noise.sigma()[0].powi(2);
        let y = data.y_continuous();
        let mut logw = Vec::with_capacity(samples);
        for _ in 0..samples {
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let kc = DMatrix::from_fn(n, n, |i, j| {
                k(&state.kernel_cont, x[i], x[j]) + if i == j { sigma2 } else { 0.0 }
            });
            let lc = kc.clone().cholesky().unwrap();
            let alpha = lc.solve(&y.column(0).into_owned());
            let logdet: f64 = 2.0 * lc.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mut lw = -0.5 * (y.column(0).dot(&alpha) + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());
            let kd = DMatrix::from_fn(n, n, |i, j| {
                k(&state.kernel_disc, x[i], x[j]) + if i == j { 1e-10 } else { 0.0 }
            });
            let ld = kd.cholesky().unwrap().l();
            for c in 0..data.k() {
                let e = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
                let f = &ld * e;
                for i in 0..n {
                    let yi = if data.labels()[i] == c { 1.0 } else { 0.0 };
                    lw += yi * f[i] - (1.0 + f[i].exp()).ln();
                }
            }
            logw.push(lw);
        }
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let mean = w.iter().sum::<f64>() / samples as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        // delta method standard error of the log
        (max + mean.ln(), (var / samples as f64).sqrt() / mean)
    }

    #[test]
    fn elbo_bounds_importance_sampled_evidence() {
        let state = random_state(21, 3, 1, 2, 2, 1);
        let data = random_dataset(21, 3, 1, 2);
        let (log_z, se_z) = log_evidence_oracle(&state, &data, 1_000_000);
        let reps = 4000;
        let vals: Vec<f64> = (0..reps)
            .map(|s| elbo(&state, &data, &full_batch(3), s).unwrap().total)
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0) / reps as f64).sqrt();
        assert!(
            mean - 3.0 * se <= log_z + 3.0 * se_z,
            "elbo {mean} +- {se} vs log evidence {log_z} +- {se_z}"
        );
    }

    #[test]
    fn shape_errors() {
        let state = random_state(1, 6, 2, 2, 3, 2);
        let data = random_dataset(1, 5, 2, 2);
        assert!(elbo(&state, &data, &[0], 0).is_err());
        let data = random_dataset(1, 6, 2, 2);
        assert!(elbo(&state, &data, &[6], 0).is_err());
        assert!(elbo(&state, &data, &[], 0).is_err());
    }
}
