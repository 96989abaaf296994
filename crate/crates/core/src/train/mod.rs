//! Adam-based ELBO maximization, initialization and gradient checking.

pub mod adam;
pub mod config;
pub mod fit;
pub mod gradcheck;
pub mod init;

pub use adam::{adam_step, AdamMoments};
pub use config::TrainConfig;
pub use fit::{fit, trace_table, TrainTrace};
pub use gradcheck::{check_gradient, grad_check, grad_check_corrupted, tiny_model, GradCheckReport, GroupCheck};
pub use init::{default_num_inducing, init_model, pca_scores};
