//! Seeded random fixtures shared by unit tests, integration tests and benches.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::{InducingVariational, LatentVariational, ModelConfig, ModelState, NoiseParams};
use crate::data::Dataset;
use crate::math::gaussian::standard_normal_matrix;
use crate::math::KernelParams;

fn random_lower<R: Rng>(rng: &mut R, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => 0.2 * (rng.random::<f64>() - 0.5),
        std::cmp::Ordering::Equal => rng.random_range(0.3..1.0),
        std::cmp::Ordering::Less => 0.0,
    })
}

fn random_inducing<R: Rng>(rng: &mut R, m: usize, q: usize, outputs: usize) -> InducingVariational {
    let z = standard_normal_matrix(rng, m, q);
    let mean = standard_normal_matrix(rng, m, outputs) * 0.5;
    let s = (0..outputs).map(|_| random_lower(rng, m)).collect();
    InducingVariational::new(z, mean, s).expect("random inducing variational is valid")
}

fn random_kernel<R: Rng>(rng: &mut R, q: usize) -> KernelParams {
    let ll = (0..q).map(|_| rng.random_range(-0.3..0.5)).collect();
    KernelParams::from_log(ll, rng.random_range(-0.5..0.5)).expect("finite log parameters")
}

/// A valid model state with `n` points, `d` features, `k` classes,
/// `m` inducing points per path and latent dimension `q`.
pub fn random_state(seed: u64, n: usize, d: usize, k: usize, m: usize, q: usize) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = standard_normal_matrix(&mut rng, n, q);
    let log_scale = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..0.0));
    let latent = LatentVariational::new(mu, log_scale).expect("random latent is valid");
    let inducing_cont = random_inducing(&mut rng, m, q, d);
    let inducing_disc = random_inducing(&mut rng, m, q, k);
    let kernel_cont = random_kernel(&mut rng, q);
    let kernel_disc = random_kernel(&mut rng, q);
    let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..1.0)).collect();
    let anchors = standard_normal_matrix(&mut rng, n, d);
    ModelState {
        latent,
        inducing_cont,
        inducing_disc,
        kernel_cont,
        kernel_disc,
        noise: NoiseParams::new(&sigma).expect("positive sigma"),
        config: ModelConfig {
            latent_dim: q,
            num_inducing: m,
            mc_samples_discrete: 4,
            seed,
        },
        anchors,
        preprocessing: None,
    }
}

/// Standard-normal features with labels cycling through `0..k`.
pub fn random_dataset(seed: u64, n: usize, d: usize, k: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let y = standard_normal_matrix(&mut rng, n, d);
    Dataset::from_parts(y, (0..n).map(|i| i % k).collect(), k).expect("valid random dataset")
}
