//! Test-point latent inference (with or without labels), label
//! prediction through the discrete path, and classification metrics.

pub mod latent;
pub mod metrics;
pub mod predict;

pub use latent::{
    decode_latent, decode_latent_from, infer_latent, infer_latent_from, initial_test_latent, test_objective, TestInit,
    TestLatent, TestObjective,
};
pub use metrics::{evaluate, evaluate_with_classes, Metrics};
pub use predict::{decode_table, predict_labels, DecodeResult};
