//! Semi-supervised Gaussian-mixture auto-encoder.
//!
//! A dense auto-encoder is trained on a mostly unlabeled data set with three
//! terms: reconstruction error, the logarithm of the closed-form Cramer-Wold
//! distance between the encoded batch and a Gaussian-mixture prior, and a
//! cross-entropy that ties a handful of labeled points to their class
//! component. Each class owns one unit-variance component, so sampling,
//! classification, interpolation and style transfer all happen in the latent
//! space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cramer_wold;
pub mod data;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod latent;
pub mod nn;
pub mod pipeline;
pub mod sweep;
pub mod trainer;

pub use cramer_wold::{
    cw_grad, cw_inner, cw_sq_dist_mixture, cw_sq_dist_standard, phi_d, silverman_gamma, Mixture,
    MixtureRef, SphericalGaussian,
};
pub use data::{Dataset, SemiDataset, SyntheticSpec};
pub use error::{CheckpointError, Error, IdxError, Result};
pub use eval::{EvalReport, FeatureMap, FeatureStats};
pub use gmm::{GaussianMixturePrior, LabeledLatentBatch};
pub use latent::LatentCode;
pub use nn::{Activation, DenseNet};
pub use trainer::{EpochLog, ModelState, TrainingConfig};

/// Runs `f` in a rayon pool capped by `SEGMA_THREADS`, when set.
pub fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("SEGMA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}
