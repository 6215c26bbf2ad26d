//! The composite objective, semi-supervised mini-batches, and the training loop.
//!
//! Per batch the loss is
//!
//! ```text
//! MSE(X̂) + α · ln(d²_γ(E X̂, P_Z) + log_eps) + β · CE(labeled codes)
//! ```
//!
//! where `X̂` is the union of the unlabeled and labeled halves of the batch and
//! `γ` follows Silverman's rule for `N_c = round(batch_size / 2K)` samples per
//! class. Encoder, decoder and component means are updated with Adam; the
//! component masses stay at the labeled-set proportions.

use std::fmt;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedIndex};

use crate::cramer_wold::{cw_sq_dist_mixture, cw_sq_dist_with_grad, silverman_gamma};
use crate::data::{Dataset, SemiDataset};
use crate::error::{Error, Result};
use crate::gmm::{init_means, set_masses_from_labels, GaussianMixturePrior, LabeledLatentBatch};
use crate::nn::{mse, mse_grad, AdamState, DenseNet, NetGrads};

/// RNG streams derived from the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_BATCHES: u64 = 1;

/// ChaCha8 generator for `seed` on an independent stream per purpose.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Weight of the log Cramer-Wold term.
    pub alpha: f64,
    /// Weight of the cross-entropy term.
    pub beta: f64,
    pub learning_rate: f64,
    /// Learning rate for the component means; `None` shares `learning_rate`.
    pub means_learning_rate: Option<f64>,
    /// Total batch size; half of every batch is labeled.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub log_eps: f64,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the decoder, from latent side to output side.
    pub decoder_hidden: Vec<usize>,
    pub deterministic: bool,
    /// Cap on held-out items scored each epoch.
    pub val_limit: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 10.0,
            learning_rate: 3e-4,
            means_learning_rate: None,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            log_eps: 1e-12,
            latent_dim: 10,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            deterministic: false,
            val_limit: 2000,
        }
    }
}

impl TrainingConfig {
    /// Decoder hidden widths mirror the encoder's.
    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.decoder_hidden = hidden.iter().rev().copied().collect();
        self.encoder_hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be >= 0"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if let Some(lr) = self.means_learning_rate {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::invalid("means learning rate must be finite and >= 0"));
            }
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "batch size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.latent_dim < 2 {
            return Err(Error::invalid("latent dimension must be >= 2"));
        }
        if !(self.log_eps >= 0.0) {
            return Err(Error::invalid("log_eps must be >= 0"));
        }
        Ok(())
    }

    pub fn encoder_shape(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.encoder_hidden.iter().copied())
            .chain(std::iter::once(self.latent_dim))
            .collect()
    }

    pub fn decoder_shape(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(self.latent_dim)
            .chain(self.decoder_hidden.iter().copied())
            .chain(std::iter::once(input_dim))
            .collect()
    }

    /// `N_c = round(batch_size / 2K)`, at least 1.
    pub fn samples_per_class(&self, n_classes: usize) -> usize {
        ((self.batch_size as f64 / (2.0 * n_classes as f64)).round() as usize).max(1)
    }

    pub fn gamma(&self, n_classes: usize) -> f64 {
        silverman_gamma(self.samples_per_class(n_classes)).expect("N_c >= 1")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub prior: GaussianMixturePrior,
    pub encoder_opt: AdamState,
    pub decoder_opt: AdamState,
    pub means_opt: AdamState,
    pub step: u64,
    pub config: TrainingConfig,
    pub input_shape: Vec<usize>,
}

impl ModelState {
    /// Glorot-initialized networks, simplex means, masses from the labels.
    pub fn init(data: &SemiDataset, config: &TrainingConfig) -> Result<Self> {
        config.validate()?;
        if data.labels.is_empty() {
            return Err(Error::invalid("training needs at least one labeled sample"));
        }
        let mut rng = seeded(config.seed, STREAM_INIT);
        let n = data.dim();
        let encoder = DenseNet::glorot(&config.encoder_shape(n), &mut rng)?;
        let decoder = DenseNet::glorot(&config.decoder_shape(n), &mut rng)?;
        let means = init_means(data.n_classes, config.latent_dim, &mut rng)?;
        let masses = set_masses_from_labels(&data.labels, data.n_classes)?;
        let prior = GaussianMixturePrior::new(means, masses)?;
        let lr = config.learning_rate;
        Ok(Self {
            encoder_opt: AdamState::for_net(lr, &encoder),
            decoder_opt: AdamState::for_net(lr, &decoder),
            means_opt: AdamState::new(
                config.means_learning_rate.unwrap_or(lr),
                &[prior.n_classes() * prior.dim()],
            ),
            encoder,
            decoder,
            prior,
            step: 0,
            config: config.clone(),
            input_shape: data.input_shape.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.prior.n_classes()
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(x)
    }

    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.predict(z)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decode(self.encode(x)?.view())
    }

    pub fn classify_features(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.prior.classify_batch(self.encode(x)?.view())
    }

    /// Fails with both dimensions named when they disagree with the model.
    pub fn check_dims(&self, input_dim: Option<usize>, latent_dim: Option<usize>) -> Result<()> {
        if let Some(n) = input_dim {
            if n != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    what: "input dimension",
                    expected: self.input_dim(),
                    found: n,
                });
            }
        }
        if let Some(d) = latent_dim {
            if d != self.latent_dim() {
                return Err(Error::DimensionMismatch {
                    what: "latent dimension",
                    expected: self.latent_dim(),
                    found: d,
                });
            }
        }
        Ok(())
    }

    /// Bandwidth used during training.
    pub fn gamma(&self) -> f64 {
        self.config.gamma(self.n_classes())
    }

    /// Squared Cramer-Wold distance between the encoded rows and the prior.
    pub fn latent_cw_distance(&self, x: ArrayView2<f64>) -> Result<f64> {
        let z = self.encode(x)?;
        cw_sq_dist_mixture(z.view(), &self.prior.as_mixture(), self.gamma())
    }

    /// Fraction of rows classified as their label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data.require_labels()?;
        if labels.is_empty() {
            return Err(Error::invalid("accuracy of an empty set"));
        }
        let pred = self.classify_features(data.features.view())?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// One mini-batch: row indices into the training pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Batches for one epoch. The unlabeled pool is shuffled and cut into halves
/// of `batch_size / 2`; each half is paired with an equally large labeled half
/// drawn with replacement, stratified by the labeled class proportions.
pub fn make_batches<R: Rng + ?Sized>(data: &SemiDataset, batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if data.labeled_idx.is_empty() {
        return Err(Error::invalid("batches need at least one labeled sample"));
    }
    if batch_size < 2 {
        return Err(Error::invalid("batch size must be >= 2"));
    }
    let half = batch_size / 2;
    let k = data.n_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (&i, &y) in data.labeled_idx.iter().zip(&data.labels) {
        by_class[y].push(i);
    }
    let total = data.labeled_idx.len() as f64;
    let proportions: Vec<f64> = by_class.iter().map(|c| c.len() as f64 / total).collect();

    let mut pool = data.unlabeled_idx();
    pool.shuffle(rng);
    pool.chunks(half)
        .map(|chunk| {
            let counts = stratified_counts(&proportions, chunk.len(), rng);
            let mut labeled = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for (class, &count) in counts.iter().enumerate() {
                let members = &by_class[class];
                for _ in 0..count {
                    labeled.push(members[rng.gen_range(0..members.len())]);
                    labels.push(class);
                }
            }
            Ok(Batch {
                unlabeled: chunk.to_vec(),
                labeled,
                labels,
            })
        })
        .collect()
}

/// Splits `n` slots by `proportions`: floors first, then the remaining slots
/// are handed out with probability proportional to the fractional parts, so
/// each class receives `n · p_k` slots in expectation.
pub fn stratified_counts<R: Rng + ?Sized>(proportions: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let remainder = n.saturating_sub(assigned);
    if remainder > 0 {
        let fractions: Vec<f64> = exact.iter().zip(&counts).map(|(e, &c)| e - c as f64).collect();
        match WeightedIndex::new(&fractions) {
            Ok(picker) => {
                for _ in 0..remainder {
                    counts[picker.sample(rng)] += 1;
                }
            }
            Err(_) => {
                // Rounding left no fractional mass; give the slots to the largest classes.
                let mut order: Vec<usize> = (0..proportions.len()).collect();
                order.sort_by(|&a, &b| proportions[b].total_cmp(&proportions[a]));
                for i in 0..remainder {
                    counts[order[i % order.len()]] += 1;
                }
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mse: f64,
    /// `ln(d² + log_eps)`; may be negative.
    pub log_cw: f64,
    /// Raw squared Cramer-Wold distance of the batch.
    pub cw: f64,
    pub ce: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: NetGrads,
    pub decoder: NetGrads,
    pub means: Array2<f64>,
}

fn finite_or(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} loss component ({v})")))
    }
}

/// Loss components of one batch, without gradients.
pub fn total_loss(
    model: &ModelState,
    unlabeled: ArrayView2<f64>,
    labeled: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    Ok(loss_and_grads(model, unlabeled, labeled, labels, config, false)?.0)
}

/// Loss components and gradients for the encoder, decoder and means.
pub fn loss_with_grads(
    model: &ModelState,
    unlabeled: ArrayView2<f64>,
    labeled: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainingConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = loss_and_grads(model, unlabeled, labeled, labels, config, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn loss_and_grads(
    model: &ModelState,
    unlabeled: ArrayView2<f64>,
    labeled: ArrayView2<f64>,
    labels: &[usize],
    config: &TrainingConfig,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    if unlabeled.nrows() == 0 || labeled.nrows() == 0 {
        return Err(Error::invalid("both batch halves must be nonempty"));
    }
    if labeled.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labeled batch labels",
            expected: labeled.nrows(),
            found: labels.len(),
        });
    }
    let x = concatenate(Axis(0), &[unlabeled.view(), labeled.view()]).map_err(|e| Error::invalid(e.to_string()))?;
    let n_unlabeled = unlabeled.nrows();

    let (z, enc_cache) = model.encoder.forward(x.view())?;
    let (recon, dec_cache) = model.decoder.forward(z.view())?;
    let mse_value = finite_or("mse", mse(x.view(), recon.view())?)?;

    let gamma = config.gamma(model.n_classes());
    let mixture = model.prior.as_mixture();
    let (cw, cw_grad) = if with_grads && config.alpha > 0.0 {
        let (v, g) = cw_sq_dist_with_grad(z.view(), &mixture, gamma)?;
        (v, Some(g))
    } else {
        (cw_sq_dist_mixture(z.view(), &mixture, gamma)?, None)
    };
    let log_arg = cw + config.log_eps;
    let log_cw = log_arg.ln();
    if config.alpha > 0.0 {
        finite_or("log_cw", log_cw)?;
    }

    let labeled_batch = LabeledLatentBatch::new(z.slice(s![n_unlabeled.., ..]).to_owned(), labels.to_vec())?;
    let ce = if config.beta > 0.0 {
        finite_or("cross-entropy", model.prior.cross_entropy(&labeled_batch)?)?
    } else {
        0.0
    };

    let mut total = mse_value;
    if config.alpha > 0.0 {
        total += config.alpha * log_cw;
    }
    if config.beta > 0.0 {
        total += config.beta * ce;
    }
    let loss = LossBreakdown {
        mse: mse_value,
        log_cw,
        cw,
        ce,
        total: finite_or("total", total)?,
    };
    if !with_grads {
        return Ok((loss, None));
    }

    let d_recon = mse_grad(x.view(), recon.view())?;
    let (decoder_grads, mut d_z) = model.decoder.backward(&dec_cache, d_recon.view())?;
    let mut d_means = Array2::zeros(model.prior.means().raw_dim());

    if let Some(g) = cw_grad {
        let scale = config.alpha / log_arg;
        d_z.scaled_add(scale, &g.d_points);
        d_means.scaled_add(scale, &g.d_means);
    }
    if config.beta > 0.0 {
        let (d_codes, d_mu) = model.prior.cross_entropy_grad(&labeled_batch)?;
        d_z.slice_mut(s![n_unlabeled.., ..]).scaled_add(config.beta, &d_codes);
        d_means.scaled_add(config.beta, &d_mu);
    }
    let (encoder_grads, _) = model.encoder.backward(&enc_cache, d_z.view())?;

    Ok((
        loss,
        Some(Gradients {
            encoder: encoder_grads,
            decoder: decoder_grads,
            means: d_means,
        }),
    ))
}

/// One forward/backward pass over a batch and one Adam update of the encoder,
/// decoder and means. Masses are never touched.
pub fn train_step(model: &mut ModelState, data: &SemiDataset, batch: &Batch) -> Result<LossBreakdown> {
    let xu = data.features.select(Axis(0), &batch.unlabeled);
    let xl = data.features.select(Axis(0), &batch.labeled);
    let config = model.config.clone();
    let (loss, grads) = loss_with_grads(model, xu.view(), xl.view(), &batch.labels, &config)?;
    apply_gradients(model, &grads)?;
    Ok(loss)
}

pub fn apply_gradients(model: &mut ModelState, grads: &Gradients) -> Result<()> {
    let ModelState {
        encoder,
        decoder,
        prior,
        encoder_opt,
        decoder_opt,
        means_opt,
        step,
        ..
    } = model;
    encoder_opt.step(encoder.param_blocks_mut(), &grads.encoder.blocks(), "encoder")?;
    decoder_opt.step(decoder.param_blocks_mut(), &grads.decoder.blocks(), "decoder")?;
    let d_means = grads.means.as_slice().expect("standard layout");
    means_opt.step(
        vec![prior.means_mut().as_slice_mut().expect("standard layout")],
        &[d_means],
        "means",
    )?;
    *step += 1;
    Ok(())
}

/// Per-epoch averages written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub log_cw: f64,
    pub ce: f64,
    pub total: f64,
    pub val_accuracy: f64,
}

pub const LOG_HEADER: &str = "# epoch\tmse\tlog_cw\tce\ttotal\tval_accuracy";

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.mse, self.log_cw, self.ce, self.total, self.val_accuracy
        )
    }
}

impl EpochLog {
    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::invalid(format!("log line has {} fields, expected 6", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad log field {:?}", fields[i])))
        };
        Ok(Self {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::invalid(format!("bad epoch {:?}", fields[0])))?,
            mse: num(1)?,
            log_cw: num(2)?,
            ce: num(3)?,
            total: num(4)?,
            val_accuracy: num(5)?,
        })
    }
}

pub fn format_log(entries: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<EpochLog>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(EpochLog::parse)
        .collect()
}

/// Runs `epochs` epochs on an existing model. Accuracy is measured on
/// `holdout` when given, otherwise on the labeled part of `data`.
pub fn train_epochs(
    model: &mut ModelState,
    data: &SemiDataset,
    holdout: Option<&Dataset>,
    epochs: usize,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let val_set = match holdout {
        Some(h) => h.head(model.config.val_limit),
        None => labeled_view(data)?,
    };
    let mut log = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let batches = make_batches(data, model.config.batch_size, rng)?;
        let mut sums = LossBreakdown::default();
        for batch in &batches {
            let l = train_step(model, data, batch)?;
            sums.mse += l.mse;
            sums.log_cw += l.log_cw;
            sums.ce += l.ce;
            sums.total += l.total;
        }
        let n = batches.len().max(1) as f64;
        let entry = EpochLog {
            epoch,
            mse: sums.mse / n,
            log_cw: sums.log_cw / n,
            ce: sums.ce / n,
            total: sums.total / n,
            val_accuracy: model.accuracy(&val_set)?,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

fn labeled_view(data: &SemiDataset) -> Result<Dataset> {
    Dataset::new(
        data.features.select(Axis(0), &data.labeled_idx),
        Some(data.labels.clone()),
        data.n_classes,
        data.input_shape.clone(),
    )
}

/// Initializes a model and trains it for `config.epochs` epochs.
pub fn fit(data: &SemiDataset, config: &TrainingConfig, holdout: Option<&Dataset>) -> Result<(ModelState, Vec<EpochLog>)> {
    fit_with(data, config, holdout, |_| {})
}

pub fn fit_with(
    data: &SemiDataset,
    config: &TrainingConfig,
    holdout: Option<&Dataset>,
    on_epoch: impl FnMut(&EpochLog) + Send,
) -> Result<(ModelState, Vec<EpochLog>)> {
    let run = || -> Result<(ModelState, Vec<EpochLog>)> {
        let mut model = ModelState::init(data, config)?;
        let mut rng = seeded(config.seed, STREAM_BATCHES);
        let log = train_epochs(&mut model, data, holdout, config.epochs, &mut rng, on_epoch)?;
        Ok((model, log))
    };
    if config.deterministic {
        // Row-parallel kernels reduce in a fixed order, but a single worker
        // keeps the schedule identical too.
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    } else {
        run()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split_semi, SyntheticSpec};
    use ndarray::Array;
    use rand_distr::StandardNormal;

    fn small_semi(seed: u64) -> SemiDataset {
        let spec = SyntheticSpec::random_centers(3, 8, 0.1, 40, 1, seed);
        let ds = make_synthetic(&spec, &mut seeded(seed, 9)).unwrap();
        split_semi(&ds, 9, true, &mut seeded(seed, 10)).unwrap()
    }

    fn tiny_config() -> TrainingConfig {
        TrainingConfig {
            batch_size: 16,
            epochs: 2,
            latent_dim: 10,
            ..TrainingConfig::default()
        }
        .with_hidden(vec![16])
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig { batch_size: 7, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { alpha: -1.0, ..Default::default() },
            TrainingConfig { beta: f64::NAN, ..Default::default() },
            TrainingConfig { latent_dim: 1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let c = TrainingConfig::default().with_hidden(vec![256, 128]);
        assert_eq!(c.encoder_shape(784), vec![784, 256, 128, 10]);
        assert_eq!(c.decoder_shape(784), vec![10, 128, 256, 784]);
        assert_eq!(TrainingConfig { batch_size: 64, ..Default::default() }.samples_per_class(3), 11);
    }

    #[test]
    fn batches_are_half_labeled_and_cover_pool() {
        let spec = SyntheticSpec::random_centers(2, 4, 0.1, 200, 1, 1);
        let ds = make_synthetic(&spec, &mut seeded(1, 0)).unwrap();
        let semi = split_semi(&ds, 100, true, &mut seeded(1, 1)).unwrap();
        let batches = make_batches(&semi, 64, &mut seeded(1, 2)).unwrap();
        let mut seen = vec![0usize; semi.len()];
        for b in &batches {
            assert_eq!(b.labeled.len(), b.unlabeled.len());
            for &i in &b.unlabeled {
                seen[i] += 1;
            }
            for (&i, &y) in b.labeled.iter().zip(&b.labels) {
                assert!(semi.labeled_idx.contains(&i));
                assert_eq!(semi.hidden_labels.as_ref().unwrap()[i], y);
            }
        }
        for (i, &count) in seen.iter().enumerate() {
            let expected = usize::from(!semi.labeled_idx.contains(&i));
            assert_eq!(count, expected);
        }
        assert!(batches[..batches.len() - 1].iter().all(|b| b.labeled.len() == 32));
        let again = make_batches(&semi, 64, &mut seeded(1, 2)).unwrap();
        assert_eq!(batches, again);
    }

    #[test]
    fn stratified_counts_expectation() {
        // Proportions (0.75, 0.25) over 32 slots split exactly; (0.7, 0.3) needs rounding.
        let mut rng = seeded(3, 0);
        assert_eq!(stratified_counts(&[0.75, 0.25], 32, &mut rng), vec![24, 8]);
        let trials = 10_000;
        let mut sum = 0usize;
        for _ in 0..trials {
            let c = stratified_counts(&[0.7, 0.3], 32, &mut rng);
            assert_eq!(c[0] + c[1], 32);
            sum += c[0];
        }
        // Expected 22.4 per batch; the rounding is Bernoulli(0.4).
        let mean = sum as f64 / trials as f64;
        let sigma = (0.4f64 * 0.6 / trials as f64).sqrt();
        assert!((mean - 22.4).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn loss_term_removal() {
        let semi = small_semi(2);
        let model = ModelState::init(&semi, &tiny_config()).unwrap();
        let xu = semi.features.slice(s![0..8, ..]);
        let xl = semi.features.select(Axis(0), &semi.labeled_idx[..4]);
        let labels = &semi.labels[..4];
        let none = TrainingConfig { alpha: 0.0, beta: 0.0, ..tiny_config() };
        let l = total_loss(&model, xu, xl.view(), labels, &none).unwrap();
        assert_eq!(l.total, l.mse);
        let no_ce = TrainingConfig { beta: 0.0, ..tiny_config() };
        let l = total_loss(&model, xu, xl.view(), labels, &no_ce).unwrap();
        assert_eq!(l.ce, 0.0);
        assert_eq!(l.total, l.mse + 5.0 * l.log_cw);
        let full = total_loss(&model, xu, xl.view(), labels, &tiny_config()).unwrap();
        assert!(full.ce > 0.0);
        assert!(full.mse >= 0.0);
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let semi = small_semi(3);
        let config = TrainingConfig { learning_rate: 0.0, ..tiny_config() };
        let mut model = ModelState::init(&semi, &config).unwrap();
        let before = model.clone();
        let batches = make_batches(&semi, config.batch_size, &mut seeded(0, 1)).unwrap();
        train_step(&mut model, &semi, &batches[0]).unwrap();
        assert_eq!(model.encoder, before.encoder);
        assert_eq!(model.decoder, before.decoder);
        assert_eq!(model.prior, before.prior);
    }

    #[test]
    fn step_moves_means_but_not_masses() {
        let semi = small_semi(4);
        let mut model = ModelState::init(&semi, &tiny_config()).unwrap();
        let before = model.prior.clone();
        let batches = make_batches(&semi, 16, &mut seeded(0, 1)).unwrap();
        train_step(&mut model, &semi, &batches[0]).unwrap();
        assert_eq!(model.prior.masses(), before.masses());
        for k in 0..3 {
            let moved = (&model.prior.means().row(k) - &before.means().row(k)).mapv(f64::abs).sum();
            assert!(moved > 0.0);
        }
        assert_eq!(model.step, 1);
    }

    #[test]
    fn epochs_zero_returns_initialized_model() {
        let semi = small_semi(5);
        let config = TrainingConfig { epochs: 0, ..tiny_config() };
        let (model, log) = fit(&semi, &config, None).unwrap();
        assert!(log.is_empty());
        assert_eq!(model, ModelState::init(&semi, &config).unwrap());
        let means = model.prior.means();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let d = (&means.row(a) - &means.row(b)).mapv(|v| v * v).sum().sqrt();
                assert!((d - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_round_trip() {
        let semi = small_semi(6);
        let (_, log) = fit(&semi, &tiny_config(), None).unwrap();
        let text = format_log(&log);
        assert!(text.starts_with("# epoch"));
        let parsed = parse_log(&text).unwrap();
        assert_eq!(parsed, log);
        assert!(parsed.windows(2).all(|w| w[0].epoch < w[1].epoch));
        assert!(EpochLog::parse("1\t2\t3").is_err());
    }

    fn perturbed_loss(model: &ModelState, block: usize, i: usize, h: f64, xu: ArrayView2<f64>, xl: ArrayView2<f64>, y: &[usize]) -> f64 {
        let mut m = model.clone();
        let n_enc = m.encoder.param_blocks().len();
        let n_dec = m.decoder.param_blocks().len();
        if block < n_enc {
            m.encoder.param_blocks_mut()[block][i] += h;
        } else if block < n_enc + n_dec {
            m.decoder.param_blocks_mut()[block - n_enc][i] += h;
        } else {
            m.prior.means_mut().as_slice_mut().unwrap()[i] += h;
        }
        total_loss(&m, xu, xl, y, &m.config).unwrap().total
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let spec = SyntheticSpec::random_centers(3, 8, 0.2, 10, seed, seed);
            let ds = make_synthetic(&spec, &mut seeded(seed, 0)).unwrap();
            let semi = split_semi(&ds, 6, true, &mut seeded(seed, 1)).unwrap();
            let config = TrainingConfig {
                batch_size: 12,
                seed,
                ..TrainingConfig::default()
            }
            .with_hidden(vec![16]);
            let mut model = ModelState::init(&semi, &config).unwrap();
            // Move the means off the simplex so every term has a generic gradient.
            let mut rng = seeded(seed, 2);
            model.prior.means_mut().mapv_inplace(|v| v + 0.3 * { let e: f64 = StandardNormal.sample(&mut rng); e });
            let xu = semi.features.select(Axis(0), &semi.unlabeled_idx()[..6]);
            let xl = semi.features.select(Axis(0), &semi.labeled_idx);
            let (_, grads) = loss_with_grads(&model, xu.view(), xl.view(), &semi.labels, &config).unwrap();

            let mut analytic: Vec<Vec<f64>> = grads.encoder.blocks().iter().map(|b| b.to_vec()).collect();
            analytic.extend(grads.decoder.blocks().iter().map(|b| b.to_vec()));
            analytic.push(grads.means.iter().copied().collect());
            let h = 1e-6;
            let mut worst = 0.0f64;
            for (block, values) in analytic.iter().enumerate() {
                for (i, &g) in values.iter().enumerate() {
                    let plus = perturbed_loss(&model, block, i, h, xu.view(), xl.view(), &semi.labels);
                    let minus = perturbed_loss(&model, block, i, -h, xu.view(), xl.view(), &semi.labels);
                    let fd = (plus - minus) / (2.0 * h);
                    let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
            assert!(worst < 1e-4, "seed {seed}: worst relative error {worst:e}");
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let semi = small_semi(7);
        let model = ModelState::init(&semi, &tiny_config()).unwrap();
        let mut xu: Array2<f64> = Array::from_shape_fn((4, 8), |_| StandardNormal.sample(&mut seeded(0, 0)));
        xu[[0, 0]] = f64::NAN;
        let xl = semi.features.select(Axis(0), &semi.labeled_idx[..2]);
        let err = total_loss(&model, xu.view(), xl.view(), &semi.labels[..2], &tiny_config()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }
}
