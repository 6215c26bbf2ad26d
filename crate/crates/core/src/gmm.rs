//! Gaussian-mixture latent prior with unit-variance components.
//!
//! Classes are 0-based indices `0..K`. Each class owns exactly one component
//! `N(μ_k, I)` with a fixed mass `p_k`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};

use crate::cramer_wold::{MixtureRef, MASS_TOLERANCE};
use crate::error::{Error, Result};

/// Mass given to classes absent from the labeled set, before renormalization.
pub const MASS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    means: Array2<f64>,
    masses: Vec<f64>,
    // Always ones; kept so the prior can be viewed as a general mixture.
    unit_variances: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(means: Array2<f64>, masses: Vec<f64>) -> Result<Self> {
        let k = means.nrows();
        if k == 0 {
            return Err(Error::invalid("prior needs at least one component"));
        }
        if masses.len() != k {
            return Err(Error::DimensionMismatch {
                what: "prior masses",
                expected: k,
                found: masses.len(),
            });
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior mean".into()));
        }
        if masses.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("prior masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassesNotNormalized(total));
        }
        Ok(Self {
            means,
            masses,
            unit_variances: vec![1.0; k],
        })
    }

    pub fn n_classes(&self) -> usize {
        self.masses.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn mean(&self, k: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_class(k)?;
        Ok(self.means.row(k))
    }

    /// Mutable access for the optimizer; masses and variances stay fixed.
    pub fn means_mut(&mut self) -> &mut Array2<f64> {
        &mut self.means
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn variance(&self) -> f64 {
        1.0
    }

    pub fn as_mixture(&self) -> MixtureRef<'_> {
        MixtureRef {
            masses: &self.masses,
            means: self.means.view(),
            variances: &self.unit_variances,
        }
    }

    pub fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.n_classes() {
            return Err(Error::InvalidClass {
                index: k,
                classes: self.n_classes(),
            });
        }
        Ok(())
    }

    fn check_point(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "latent code",
                expected: self.dim(),
                found: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(())
    }

    /// Log class posterior `log P(k | z)`; the shared Gaussian normalizer cancels.
    pub fn log_posterior(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_point(z)?;
        Ok(self.log_posterior_unchecked(z))
    }

    fn log_posterior_unchecked(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let scores: Array1<f64> = self
            .means
            .rows()
            .into_iter()
            .zip(&self.masses)
            .map(|(mu, &p)| {
                let sq: f64 = z.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                p.ln() - 0.5 * sq
            })
            .collect();
        let lse = log_sum_exp(scores.view());
        scores.mapv(|s| s - lse)
    }

    pub fn posterior(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.log_posterior(z)?.mapv(f64::exp))
    }

    /// Most probable class; ties go to the smallest index.
    pub fn classify(&self, z: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(self.log_posterior(z)?.view()))
    }

    pub fn classify_batch(&self, codes: ArrayView2<f64>) -> Result<Vec<usize>> {
        codes.rows().into_iter().map(|z| self.classify(z)).collect()
    }

    /// Mean negative log posterior of the true labels.
    pub fn cross_entropy(&self, batch: &LabeledLatentBatch) -> Result<f64> {
        batch.check(self)?;
        let m = batch.labels.len() as f64;
        let mut total = 0.0;
        for (z, &y) in batch.codes.rows().into_iter().zip(&batch.labels) {
            total -= self.log_posterior_unchecked(z)[y];
        }
        Ok(total / m)
    }

    /// Gradients of [`Self::cross_entropy`] with respect to the codes and the means.
    pub fn cross_entropy_grad(&self, batch: &LabeledLatentBatch) -> Result<(Array2<f64>, Array2<f64>)> {
        batch.check(self)?;
        let m = batch.labels.len() as f64;
        let mut d_codes = Array2::zeros(batch.codes.raw_dim());
        let mut d_means = Array2::zeros(self.means.raw_dim());
        for (i, (z, &y)) in batch.codes.rows().into_iter().zip(&batch.labels).enumerate() {
            let resp = self.log_posterior_unchecked(z).mapv(f64::exp);
            // d/dz = Σ_k r_k μ_k − μ_y ; d/dμ_k = r_k (z − μ_k) − [k = y](z − μ_y)
            let mut dz = resp.dot(&self.means);
            dz -= &self.means.row(y);
            d_codes.row_mut(i).assign(&(dz / m));
            for (k, r) in resp.iter().enumerate() {
                let weight = if k == y { r - 1.0 } else { *r };
                let diff = &z - &self.means.row(k);
                d_means.row_mut(k).scaled_add(weight / m, &diff);
            }
        }
        Ok((d_codes, d_means))
    }

    /// `n` i.i.d. draws from component `k`.
    pub fn sample_component<R: Rng + ?Sized>(&self, k: usize, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        self.check_class(k)?;
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for (x, mu) in row.iter_mut().zip(self.means.row(k)) {
                let eps: f64 = StandardNormal.sample(rng);
                *x = mu + eps;
            }
        }
        Ok(out)
    }

    /// `n` draws from the marginal mixture; returns the draws and their components.
    pub fn sample_prior_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
        let picker = WeightedIndex::new(&self.masses).expect("masses validated at construction");
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        let mut comps = Vec::with_capacity(n);
        for mut row in out.rows_mut() {
            let k = picker.sample(rng);
            comps.push(k);
            for (x, mu) in row.iter_mut().zip(self.means.row(k)) {
                let eps: f64 = StandardNormal.sample(rng);
                *x = mu + eps;
            }
        }
        (out, comps)
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        self.sample_prior_labeled(n, rng).0
    }
}

pub(crate) fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LabeledLatentBatch {
    pub codes: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledLatentBatch {
    pub fn new(codes: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if codes.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labeled batch labels",
                expected: codes.nrows(),
                found: labels.len(),
            });
        }
        Ok(Self { codes, labels })
    }

    fn check(&self, prior: &GaussianMixturePrior) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::invalid("labeled batch is empty"));
        }
        if self.codes.ncols() != prior.dim() {
            return Err(Error::DimensionMismatch {
                what: "labeled code",
                expected: prior.dim(),
                found: self.codes.ncols(),
            });
        }
        for &y in &self.labels {
            prior.check_class(y)?;
        }
        Ok(())
    }
}

/// Vertices of a regular simplex with unit edges, centered at the origin,
/// rotated by a random orthogonal map. Row `k` is the initial mean of class `k`.
pub fn init_means<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::invalid("init_means needs K >= 1"));
    }
    if d + 1 < k {
        return Err(Error::invalid(format!(
            "cannot place {k} equidistant means in {d} dimensions (need D >= K-1)"
        )));
    }
    // Helmert basis of the hyperplane orthogonal to (1,..,1): the centered
    // standard basis, scaled by 1/√2, has unit edges.
    let mut simplex = Array2::<f64>::zeros((k, d));
    for j in 1..k {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..k {
            let h = if i < j {
                1.0
            } else if i == j {
                -(j as f64)
            } else {
                0.0
            };
            simplex[[i, j - 1]] = h / norm / std::f64::consts::SQRT_2;
        }
    }
    let rotation = random_orthogonal(d, rng);
    Ok(simplex.dot(&rotation))
}

/// Haar-ish random orthogonal matrix via Gram-Schmidt on Gaussian columns.
fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::from_shape_fn((d, d), |_| StandardNormal.sample(rng));
        let mut ok = true;
        for i in 0..d {
            for _ in 0..2 {
                for j in 0..i {
                    let proj = q.row(i).dot(&q.row(j));
                    let qj = q.row(j).to_owned();
                    q.row_mut(i).scaled_add(-proj, &qj);
                }
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

/// Class proportions of the labeled set; absent classes get [`MASS_FLOOR`].
pub fn set_masses_from_labels(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot set masses from an empty label set"));
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidClass { index: y, classes: k });
        }
        counts[y] += 1;
    }
    let total = labels.len() as f64;
    let mut masses: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { MASS_FLOOR } else { c as f64 / total })
        .collect();
    let sum: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|p| *p /= sum);
    Ok(masses)
}

/// Column-wise centroid.
pub fn centroid(means: ArrayView2<f64>) -> Array1<f64> {
    means.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(means.ncols()))
}
