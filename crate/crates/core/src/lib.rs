//! Latent-variable double Gaussian process decoder.
//!
//! A shared low-dimensional latent `X` drives two sparse variational GPs:
//! one emits continuous observations (Gaussian noise), the other emits
//! class labels (per-class Bernoulli through a logistic link). Training
//! maximizes a five-term evidence lower bound; decoding infers test latents
//! from the continuous observations alone and reads labels off the
//! discrete path.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decode;
pub mod error;
pub mod math;
pub mod model;
pub mod train;

pub use data::{Dataset, FeatureRanking, FoldSplit, SynthConfig};
pub use decode::{DecodeResult, Metrics, TestLatent};
pub use error::{Error, ErrorKind, Result};
pub use math::{CholeskyFactor, GramMatrix, KernelParams};
pub use model::{ElboBreakdown, InducingVariational, LatentVariational, MarginalGaussians, ModelState, NoiseParams};
pub use train::{TrainConfig, TrainTrace};
