//! Fréchet distance between Gaussian fits of feature sets, the generative
//! quality proxies built on it, and test error.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{seeded, ModelState};

/// Eigenvalues below `-PSD_TOLERANCE` make a matrix non-PSD; smaller
/// negatives are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Sample mean and unbiased covariance of the rows.
    pub fn from_rows(x: ArrayView2<f64>) -> Result<Self> {
        let count = x.nrows();
        if count < 2 {
            return Err(Error::invalid(format!("feature statistics need at least 2 rows, got {count}")));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = &x - &mean;
        let mut covariance = centered.t().dot(&centered) / (count - 1) as f64;
        symmetrize(&mut covariance);
        Ok(Self { mean, covariance, count })
    }

    pub fn new(mean: Array1<f64>, covariance: Array2<f64>, count: usize) -> Result<Self> {
        let f = mean.len();
        if covariance.dim() != (f, f) {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: f,
                found: covariance.nrows(),
            });
        }
        if count < 2 {
            return Err(Error::invalid("feature statistics need count >= 2"));
        }
        for i in 0..f {
            for j in 0..i {
                let (a, b) = (covariance[[i, j]], covariance[[j, i]]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::invalid(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { mean, covariance, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn checked_eigenvalues(values: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    values
        .map(|v| {
            if v < -PSD_TOLERANCE || !v.is_finite() {
                Err(Error::NotPsd(v))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

/// Principal square root of a symmetric PSD matrix.
fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    let roots: Vec<f64> = checked_eigenvalues(eig.eigenvalues.iter().copied())?
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * roots[j]);
    Ok(&scaled * q.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = to_nalgebra(&a.covariance);
    let sb = to_nalgebra(&b.covariance);
    let root_a = psd_sqrt(sa.clone())?;
    let mut inner = &root_a * &sb * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = checked_eigenvalues(SymmetricEigen::new(inner).eigenvalues.iter().copied())?
        .into_iter()
        .map(f64::sqrt)
        .sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    RawPixels,
    /// Projection on the top 50 principal directions of the real data.
    Pca50,
}

impl FeatureMap {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMap::RawPixels => "raw_pixels",
            FeatureMap::Pca50 => "pca_50",
        }
    }

    /// Fits the map on real data.
    pub fn fit(self, real: ArrayView2<f64>) -> Result<FittedFeatures> {
        match self {
            FeatureMap::RawPixels => Ok(FittedFeatures::Raw { dim: real.ncols() }),
            FeatureMap::Pca50 => FittedFeatures::pca(real, 50),
        }
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_pixels" | "raw" => Ok(FeatureMap::RawPixels),
            "pca_50" | "pca50" => Ok(FeatureMap::Pca50),
            _ => Err(Error::invalid(format!("unknown feature map {s:?} (raw_pixels | pca_50)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedFeatures {
    Raw {
        dim: usize,
    },
    Pca {
        center: Array1<f64>,
        /// `F × N`, one principal direction per row.
        components: Array2<f64>,
    },
}

impl FittedFeatures {
    /// Top `k` principal directions (fewer if the input is narrower), each
    /// signed so that its largest-magnitude entry is positive.
    pub fn pca(real: ArrayView2<f64>, k: usize) -> Result<Self> {
        let stats = FeatureStats::from_rows(real)?;
        let eig = SymmetricEigen::new(to_nalgebra(&stats.covariance));
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let n = real.ncols();
        let k = k.min(n);
        let mut components = Array2::zeros((k, n));
        for (row, &col) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(col);
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                components[[row, j]] = sign * v[j];
            }
        }
        Ok(FittedFeatures::Pca {
            center: stats.mean,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedFeatures::Raw { dim } => *dim,
            FittedFeatures::Pca { components, .. } => components.nrows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FittedFeatures::Raw { dim } => *dim,
            FittedFeatures::Pca { components, .. } => components.ncols(),
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature map input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(match self {
            FittedFeatures::Raw { .. } => x.to_owned(),
            FittedFeatures::Pca { center, components } => (&x - center).dot(&components.t()),
        })
    }
}

/// Real-data reference for repeated Fréchet comparisons.
#[derive(Debug, Clone)]
pub struct FidReference {
    pub features: FittedFeatures,
    pub stats: FeatureStats,
}

impl FidReference {
    pub fn new(real: ArrayView2<f64>, map: FeatureMap) -> Result<Self> {
        let features = map.fit(real)?;
        check_rank(real.nrows(), features.dim(), "real")?;
        let stats = FeatureStats::from_rows(features.transform(real)?.view())?;
        Ok(Self { features, stats })
    }

    pub fn distance(&self, generated: ArrayView2<f64>) -> Result<f64> {
        check_rank(generated.nrows(), self.features.dim(), "generated")?;
        let stats = FeatureStats::from_rows(self.features.transform(generated)?.view())?;
        frechet_distance(&stats, &self.stats)
    }
}

fn check_rank(n: usize, f: usize, which: &str) -> Result<()> {
    if n < f + 1 {
        return Err(Error::invalid(format!(
            "{which} set has {n} samples; at least feature dim + 1 = {} needed",
            f + 1
        )));
    }
    Ok(())
}

/// Fréchet distance between a generated set and a real set under `map`.
pub fn fid_between(generated: ArrayView2<f64>, real: ArrayView2<f64>, map: FeatureMap) -> Result<f64> {
    FidReference::new(real, map)?.distance(generated)
}

pub fn prior_samples<R: Rng + ?Sized>(model: &ModelState, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    let z = model.prior.sample_prior(n, rng);
    model.decode(z.view())
}

/// `n` decoded draws from two randomly chosen test codes at a uniform `t`.
pub fn interpolation_samples<R: Rng + ?Sized>(
    model: &ModelState,
    test: ArrayView2<f64>,
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let m = test.nrows();
    if m < 2 {
        return Err(Error::invalid("interpolation needs at least 2 test points"));
    }
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..m);
        let mut j = rng.gen_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        first.push(i);
        second.push(j);
        ts.push(rng.gen::<f64>());
    }
    let za = model.encode(test.select(Axis(0), &first).view())?;
    let zb = model.encode(test.select(Axis(0), &second).view())?;
    let mut z = Array2::zeros(za.raw_dim());
    for (r, &t) in ts.iter().enumerate() {
        let row = &za.row(r) * (1.0 - t) + &zb.row(r) * t;
        z.row_mut(r).assign(&row);
    }
    model.decode(z.view())
}

pub fn fid_proxy<R: Rng + ?Sized>(
    model: &ModelState,
    real: &Dataset,
    n: usize,
    map: FeatureMap,
    rng: &mut R,
) -> Result<f64> {
    let reference = FidReference::new(real.features.view(), map)?;
    check_rank(n, reference.features.dim(), "generated")?;
    reference.distance(prior_samples(model, n, rng)?.view())
}

pub fn interpolation_fid<R: Rng + ?Sized>(
    model: &ModelState,
    test: &Dataset,
    n: usize,
    map: FeatureMap,
    rng: &mut R,
) -> Result<f64> {
    let reference = FidReference::new(test.features.view(), map)?;
    check_rank(n, reference.features.dim(), "generated")?;
    reference.distance(interpolation_samples(model, test.features.view(), n, rng)?.view())
}

/// `1 − accuracy` of the prior's classifier on encoded test rows.
pub fn test_error(model: &ModelState, test: &Dataset) -> Result<f64> {
    Ok(1.0 - model.accuracy(test)?)
}

/// Evaluation settings echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n: usize,
    pub feature_map: FeatureMap,
    pub fid_seed: u64,
    pub interpolation_seed: u64,
}

impl EvalSettings {
    pub fn new(n: usize, feature_map: FeatureMap, seed: u64) -> Self {
        Self {
            n,
            feature_map,
            fid_seed: seed,
            interpolation_seed: seed.wrapping_add(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub test_error: f64,
    pub fid_proxy: f64,
    pub interpolation_fid: f64,
    pub settings: EvalSettings,
    pub n_test: usize,
}

const EVAL_STREAM: u64 = 7;

/// Test error, prior-sample FID and interpolation FID against the test set.
pub fn evaluate(model: &ModelState, test: &Dataset, settings: EvalSettings) -> Result<EvalReport> {
    if settings.n == 0 {
        return Err(Error::invalid("evaluation sample count must be positive"));
    }
    model.check_dims(Some(test.dim()), None)?;
    let reference = FidReference::new(test.features.view(), settings.feature_map)?;
    check_rank(settings.n, reference.features.dim(), "generated")?;
    let generated = prior_samples(model, settings.n, &mut seeded(settings.fid_seed, EVAL_STREAM))?;
    let interpolated = interpolation_samples(
        model,
        test.features.view(),
        settings.n,
        &mut seeded(settings.interpolation_seed, EVAL_STREAM),
    )?;
    Ok(EvalReport {
        test_error: test_error(model, test)?,
        fid_proxy: reference.distance(generated.view())?,
        interpolation_fid: reference.distance(interpolated.view())?,
        settings,
        n_test: test.len(),
    })
}

impl EvalReport {
    pub fn interpolation_ratio(&self) -> f64 {
        self.interpolation_fid / self.fid_proxy
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("test_error", self.test_error.to_string()),
            ("fid_proxy", self.fid_proxy.to_string()),
            ("interpolation_fid", self.interpolation_fid.to_string()),
            ("feature_map", self.settings.feature_map.to_string()),
            ("n", self.settings.n.to_string()),
            ("n_test", self.n_test.to_string()),
            ("fid_seed", self.settings.fid_seed.to_string()),
            ("interpolation_seed", self.settings.interpolation_seed.to_string()),
        ]
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// A header row and a value row, tab-separated.
    pub fn to_tsv(&self) -> String {
        let pairs = self.to_pairs();
        let header: Vec<&str> = pairs.iter().map(|(k, _)| *k).collect();
        let values: Vec<&str> = pairs.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }

    pub fn parse_key_value(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| Error::invalid(format!("not a key=value line: {l:?}"))))
            .collect::<Result<_>>()?;
        fn field<T: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::invalid(format!("report is missing {key}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for {key}")))
        }
        Ok(Self {
            test_error: field(&map, "test_error")?,
            fid_proxy: field(&map, "fid_proxy")?,
            interpolation_fid: field(&map, "interpolation_fid")?,
            settings: EvalSettings {
                n: field(&map, "n")?,
                feature_map: map
                    .get("feature_map")
                    .ok_or_else(|| Error::invalid("report is missing feature_map"))?
                    .parse()?,
                fid_seed: field(&map, "fid_seed")?,
                interpolation_seed: field(&map, "interpolation_seed")?,
            },
            n_test: field(&map, "n_test")?,
        })
    }
}
