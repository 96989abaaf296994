use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::math::KernelParams;
use crate::model::{InducingVariational, LatentVariational, ModelConfig, ModelState, NoiseParams};

/// `min(15, N / 2)`, at least 1.
pub fn default_num_inducing(n: usize) -> usize {
    (n / 2).clamp(1, 15)
}

/// Principal-component scores of the column-centred `y` on its top `q`
/// directions, plus the `D x q` loadings. Each loading vector is signed so
/// its largest-magnitude entry is positive.
pub fn pca_scores(y: &DMatrix<f64>, q: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, d) = y.shape();
    if q == 0 || q > n.min(d) {
        return Err(Error::param(
            "latent_dim",
            format!("must lie in 1..={}, got {q}", n.min(d)),
        ));
    }
    let means = y.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| y[(i, j)] - means[j]);
    let cov = centred.transpose() * &centred;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut loadings = DMatrix::zeros(d, q);
    for (c, &k) in order.iter().take(q).enumerate() {
        let v = eig.eigenvectors.column(k);
        let pivot = v
            .iter()
            .fold(0.0f64, |acc, &x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        loadings.set_column(c, &(v * sign));
    }
    Ok((centred * &loadings, loadings))
}

/// Initial state: PCA latent means (unit variance per dimension), scales
/// 0.1, inducing points on a random subset of those means, `q(U)` means
/// zero with covariance factor `0.1 I`, unit lengthscales and variances,
/// and noise at half of each feature's standard deviation.
pub fn init_model(data: &Dataset, q: usize, m: usize, seed: u64) -> Result<ModelState> {
    let (n, d) = (data.n(), data.d());
    if n < 2 {
        return Err(Error::InvalidData(format!("training needs at least 2 trials, got {n}")));
    }
    if q == 0 || q > n.min(d) {
        return Err(Error::param(
            "latent_dim",
            format!("must lie in 1..=min(N, D) = {}, got {q}", n.min(d)),
        ));
    }
    if m == 0 || m > n {
        return Err(Error::param(
            "num_inducing",
            format!("must lie in 1..=N = {n}, got {m}"),
        ));
    }
    let std = Standardizer::fit(data.y_continuous());
    let y = std.apply(data.y_continuous())?;
    let (mut mu, _) = pca_scores(&y, q)?;
    for mut col in mu.column_iter_mut() {
        let sd = (col.norm_squared() / n as f64).sqrt();
        if sd > 1e-12 {
            col /= sd;
        }
    }
    let log_scale = DMatrix::from_element(n, q, 0.1f64.ln());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, n, m).into_vec();
    picks.sort_unstable();
    let z = DMatrix::from_fn(m, q, |i, j| mu[(picks[i], j)]);
    let inducing_cont = InducingVariational::with_identity(z.clone(), d, 0.1)?;
    let inducing_disc = InducingVariational::with_identity(z, data.k(), 0.1)?;

    let sigma: Vec<f64> = std.sd.iter().map(|s| 0.5 * s).collect();
    let state = ModelState {
        latent: LatentVariational::new(mu, log_scale)?,
        inducing_cont,
        inducing_disc,
        kernel_cont: KernelParams::isotropic(q, 1.0, 1.0)?,
        kernel_disc: KernelParams::isotropic(q, 1.0, 1.0)?,
        noise: NoiseParams::new(&sigma)?,
        config: ModelConfig {
            latent_dim: q,
            num_inducing: m,
            mc_samples_discrete: 20,
            seed,
        },
        anchors: data.y_continuous().clone(),
        preprocessing: None,
    };
    state.validate()?;
    Ok(state)
}
