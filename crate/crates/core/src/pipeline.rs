//! Data preparation and the train-then-evaluate run shared by the CLI
//! commands and the hyperparameter sweep.

use std::path::PathBuf;

use ndarray::Axis;
use rand::seq::index::sample;

use crate::data::{load_mnist_dir, make_synthetic, split_semi, Dataset, SemiDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, EvalSettings, FeatureMap};
use crate::trainer::{fit_with, seeded, EpochLog, ModelState, TrainingConfig};

const STREAM_DATA: u64 = 20;
const STREAM_SPLIT: u64 = 21;
const STREAM_TEST: u64 = 22;

/// Test points per class for the synthetic benchmark.
pub const SYNTHETIC_TEST_PER_CLASS: usize = 300;
/// Default unlabeled pool size for the synthetic benchmark.
pub const SYNTHETIC_UNLABELED: usize = 3000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The three-blob, 20-dimensional benchmark.
    Synthetic,
    /// A directory holding the four MNIST IDX files.
    Mnist(PathBuf),
}

impl DataSource {
    pub fn parse(s: &str) -> Self {
        if s == "synthetic" {
            DataSource::Synthetic
        } else {
            DataSource::Mnist(PathBuf::from(s))
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Mnist(p) => write!(f, "{}", p.display()),
        }
    }
}

impl DataSource {
    /// Training configuration used for this source when no flags override it:
    /// a 64-64 network for 100 epochs at batch 64 on the synthetic blobs, and
    /// the 784-256-256-10 network for 30 epochs at batch 32 on MNIST.
    pub fn reference_config(&self) -> TrainingConfig {
        match self {
            DataSource::Synthetic => TrainingConfig {
                epochs: 100,
                batch_size: 64,
                ..TrainingConfig::default()
            }
            .with_hidden(vec![64, 64]),
            DataSource::Mnist(_) => TrainingConfig {
                epochs: 30,
                batch_size: 32,
                ..TrainingConfig::default()
            }
            .with_hidden(vec![256, 256]),
        }
    }

    /// Labeled and unlabeled counts of the reference runs.
    pub fn reference_plan(&self, seed: u64) -> DataPlan {
        match self {
            DataSource::Synthetic => DataPlan::synthetic(30, seed),
            DataSource::Mnist(_) => DataPlan {
                source: self.clone(),
                n_labeled: 100,
                n_unlabeled: Some(10_000),
                seed,
            },
        }
    }

    pub fn reference_feature_map(&self) -> FeatureMap {
        match self {
            DataSource::Synthetic => FeatureMap::RawPixels,
            DataSource::Mnist(_) => FeatureMap::Pca50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPlan {
    pub source: DataSource,
    pub n_labeled: usize,
    /// Unlabeled pool size; `None` keeps every remaining training item.
    pub n_unlabeled: Option<usize>,
    pub seed: u64,
}

impl DataPlan {
    pub fn synthetic(n_labeled: usize, seed: u64) -> Self {
        Self {
            source: DataSource::Synthetic,
            n_labeled,
            n_unlabeled: Some(SYNTHETIC_UNLABELED),
            seed,
        }
    }

    /// Labeled training pool and test set.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match &self.source {
            DataSource::Synthetic => {
                let total = self.n_unlabeled.unwrap_or(SYNTHETIC_UNLABELED) + self.n_labeled;
                let per_class = total.div_ceil(3);
                let pool = make_synthetic(&SyntheticSpec::benchmark(per_class, self.seed), &mut seeded(self.seed, STREAM_DATA))?;
                let test = make_synthetic(
                    &SyntheticSpec::benchmark(SYNTHETIC_TEST_PER_CLASS, self.seed),
                    &mut seeded(self.seed, STREAM_TEST),
                )?;
                Ok((pool.head(total), test))
            }
            DataSource::Mnist(dir) => {
                let (train, test) = load_mnist_dir(dir)?;
                let pool = match self.n_unlabeled {
                    Some(n) => {
                        let total = n + self.n_labeled;
                        if total > train.len() {
                            return Err(Error::invalid(format!(
                                "asked for {total} training items, only {} available",
                                train.len()
                            )));
                        }
                        let mut idx = sample(&mut seeded(self.seed, STREAM_DATA), train.len(), total).into_vec();
                        idx.sort_unstable();
                        train.subset(&idx)
                    }
                    None => train,
                };
                Ok((pool, test))
            }
        }
    }

    /// Semi-supervised training set and test set.
    pub fn prepare(&self) -> Result<(SemiDataset, Dataset)> {
        let (pool, test) = self.load()?;
        let semi = split_semi(&pool, self.n_labeled, true, &mut seeded(self.seed, STREAM_SPLIT))?;
        Ok((semi, test))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub log: Vec<EpochLog>,
}

/// Trains on `semi`, scoring each epoch on the test set.
pub fn train(
    semi: &SemiDataset,
    test: &Dataset,
    config: &TrainingConfig,
    on_epoch: impl FnMut(&EpochLog) + Send,
) -> Result<TrainOutcome> {
    let (model, log) = fit_with(semi, config, Some(test), on_epoch)?;
    Ok(TrainOutcome { model, log })
}

/// Trains, then evaluates on the test set.
pub fn train_and_evaluate(
    semi: &SemiDataset,
    test: &Dataset,
    config: &TrainingConfig,
    settings: EvalSettings,
) -> Result<(TrainOutcome, EvalReport)> {
    let outcome = train(semi, test, config, |_| {})?;
    let report = evaluate(&outcome.model, test, settings)?;
    Ok((outcome, report))
}

/// Rows of `test` the model can consume, checked against its input width.
pub fn check_test_set(model: &ModelState, test: &Dataset) -> Result<()> {
    model.check_dims(Some(test.dim()), None)?;
    if test.features.len_of(Axis(0)) == 0 {
        return Err(Error::invalid("empty test set"));
    }
    Ok(())
}
