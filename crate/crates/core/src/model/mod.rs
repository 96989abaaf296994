//! Model state, the two sparse GP paths, likelihoods and the ELBO.

pub mod document;
pub mod elbo;
pub mod generate;
pub mod likelihood;
pub mod state;
pub mod svgp;
#[doc(hidden)]
pub mod testing;

pub use document::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT_VERSION};
pub use elbo::{
    elbo, elbo_and_grad, elbo_with_noise, full_batch, sample_latent, ElboBreakdown, ElboNoise, ModelGradient,
};
pub use generate::generate;
pub use likelihood::{ell_continuous, ell_continuous_mc, ell_discrete, VARIANCE_FLOOR};
pub use state::{
    InducingVariational, LatentVariational, ModelConfig, ModelState, NoiseParams, ParamGroup, Preprocessing,
};
pub use svgp::{svgp_marginal, MarginalGaussians, INDUCING_JITTER};
