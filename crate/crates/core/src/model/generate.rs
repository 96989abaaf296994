//! Ancestral sampling through both GP paths.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::ModelState;
use super::svgp::GpPath;
use crate::error::{Error, Result};
use crate::math::gaussian::{sigmoid, standard_normal_matrix};
use crate::math::kernel::gram_values;

/// Symmetric square root `V diag(sqrt(max(lambda, 0))) V^T`. Unlike a
/// Cholesky factor this stays exact for singular covariances, which arise
/// whenever sample points coincide or the kernel variance collapses.
fn psd_sqrt(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let eig = cov.symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Joint draw of one path's outputs at `x` from `p(F | U) q(U)`, one column
/// per output.
fn draw_path(path: &GpPath<'_>, x: &DMatrix<f64>, eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let iv = path.inducing;
    let kxx = gram_values(x, x, path.kernel);
    let kxm = gram_values(x, &iv.z, path.kernel);
    let a = path.chol().solve(&kxm.transpose());
    let base = &kxx - &kxm * &a;
    let mean = a.transpose() * &iv.m;
    let mut out = DMatrix::zeros(x.nrows(), iv.outputs());
    for c in 0..iv.outputs() {
        let t = iv.s_factors[c].transpose() * &a;
        let mut cov = &base + t.transpose() * &t;
        cov = (&cov + cov.transpose()) * 0.5;
        let f = psd_sqrt(cov)? * eps.column(c);
        out.set_column(c, &(mean.column(c) + f));
    }
    Ok(out)
}

/// Draws continuous observations (with noise) and per-class label
/// probabilities at latent points `x`. Deterministic in `seed`.
pub fn generate(state: &ModelState, x: &DMatrix<f64>, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x.ncols() != state.q() {
        return Err(Error::dims("generate: latent columns", state.q(), x.ncols()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = x.nrows();
    let eps_c = standard_normal_matrix(&mut rng, b, state.d());
    let eps_d = standard_normal_matrix(&mut rng, b, state.k());
    let eps_noise = standard_normal_matrix(&mut rng, b, state.d());

    let cont = GpPath::new(&state.inducing_cont, &state.kernel_cont)?;
    let disc = GpPath::new(&state.inducing_disc, &state.kernel_disc)?;
    let mut y = draw_path(&cont, x, &eps_c)?;
    let sigma = state.noise.sigma();
    for j in 0..state.d() {
        for i in 0..b {
            y[(i, j)] += sigma[j] * eps_noise[(i, j)];
        }
    }
    let probs = draw_path(&disc, x, &eps_d)?.map(sigmoid);
    Ok((y, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::KernelParams;
    use crate::model::testing::random_state;

    #[test]
    fn probabilities_in_open_interval_and_reproducible() {
        let state = random_state(8, 5, 3, 3, 4, 2);
        let x = DMatrix::from_fn(7, 2, |i, j| (i as f64) * 0.3 - (j as f64));
        let (y, p) = generate(&state, &x, 11).unwrap();
        assert_eq!(y.shape(), (7, 3));
        assert_eq!(p.shape(), (7, 3));
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let (y2, p2) = generate(&state, &x, 11).unwrap();
        assert_eq!(y, y2);
        assert_eq!(p, p2);
        let (y3, _) = generate(&state, &x, 12).unwrap();
        assert_ne!(y, y3);
    }

    #[test]
    fn vanishing_discrete_variance_gives_one_half() {
        let mut state = random_state(9, 5, 2, 2, 3, 2);
        state.kernel_disc = KernelParams::from_log(vec![0.0, 0.0], -700.0).unwrap();
        let x = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64 * 0.25);
        let (_, p) = generate(&state, &x, 3).unwrap();
        for v in p.iter() {
            assert!((v - 0.5).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn wrong_latent_width() {
        let state = random_state(9, 5, 2, 2, 3, 2);
        assert!(generate(&state, &DMatrix::zeros(3, 3), 0).is_err());
    }
}
