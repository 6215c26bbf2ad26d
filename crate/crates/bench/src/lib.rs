//! Shared inputs for the criterion benchmarks.

use ndarray::Array2;
use segma::pipeline::DataPlan;
use segma::trainer::{make_batches, seeded, Batch};
use segma::{ModelState, SemiDataset, TrainingConfig};

/// Model, data and one batch on the synthetic benchmark at the given width.
pub fn synthetic_setup(batch_size: usize, hidden: usize) -> (ModelState, SemiDataset, Batch) {
    let (semi, _) = DataPlan::synthetic(30, 0).prepare().expect("synthetic data");
    let config = TrainingConfig {
        batch_size,
        ..TrainingConfig::default()
    }
    .with_hidden(vec![hidden, hidden]);
    let model = ModelState::init(&semi, &config).expect("model init");
    let batch = make_batches(&semi, batch_size, &mut seeded(0, 1))
        .expect("batches")
        .swap_remove(0);
    (model, semi, batch)
}

/// Rows of `data` selected by `idx`.
pub fn rows(data: &SemiDataset, idx: &[usize]) -> Array2<f64> {
    data.features.select(ndarray::Axis(0), idx)
}
