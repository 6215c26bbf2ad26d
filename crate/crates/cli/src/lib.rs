//! Command-line driver and HTTP inference service for segma models.

pub mod args;
pub mod commands;
pub mod service;

use ndarray::Array2;
use segma::latent::generate_class;
use segma::trainer::seeded;
use segma::{ModelState, Result};

const SAMPLE_STREAM: u64 = 30;

/// Decoded draws from component `class`; shared by `segma sample` and
/// `POST /sample` so both return the same images for the same seed.
pub fn sample_class(model: &ModelState, class: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    generate_class(model, class, n, &mut seeded(seed, SAMPLE_STREAM))
}

/// Worker count from `SEGMA_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("SEGMA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}
