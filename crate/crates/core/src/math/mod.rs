//! Numerical substrate: kernels, stabilized Cholesky, Gaussian divergences.

pub mod chol;
pub mod gaussian;
pub mod kernel;

pub use chol::{chol_jitter, CholeskyFactor, DEFAULT_JITTER};
pub use gaussian::{kl_diag_standard, kl_full_vs_prior, reparam_sample};
pub use kernel::{ard_rbf, ard_rbf_grad_log_lengthscales, gram, GramMatrix, KernelParams, PointSetId};
