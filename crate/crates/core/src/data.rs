//! Data sets: IDX ingestion, synthetic Gaussian blobs, and semi-supervised splits.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, IdxError, Result};

/// Features with optional labels. Pixel data lives in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// 0 when the data set carries no labels.
    pub n_classes: usize,
    /// Shape of a single item, e.g. `[28, 28]`; its product is the feature width.
    pub input_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, n_classes: usize, input_shape: Vec<usize>) -> Result<Self> {
        if input_shape.iter().product::<usize>() != features.ncols() {
            return Err(Error::DimensionMismatch {
                what: "input shape",
                expected: features.ncols(),
                found: input_shape.iter().product(),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::DimensionMismatch {
                    what: "label count",
                    expected: features.nrows(),
                    found: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
                return Err(Error::InvalidClass {
                    index: bad,
                    classes: n_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            input_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            n_classes: self.n_classes,
            input_shape: self.input_shape.clone(),
        }
    }

    /// First `n` items (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid("data set has no labels"))
    }
}

/// A mostly unlabeled training pool with a small labeled index set.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDataset {
    pub features: Array2<f64>,
    pub labeled_idx: Vec<usize>,
    /// Labels of `labeled_idx`, position by position.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub input_shape: Vec<usize>,
    /// Ground truth for the whole pool when known; never used for training.
    pub hidden_labels: Option<Vec<usize>>,
}

impl SemiDataset {
    pub fn new(features: Array2<f64>, labeled_idx: Vec<usize>, labels: Vec<usize>, n_classes: usize, input_shape: Vec<usize>) -> Result<Self> {
        if labeled_idx.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "labeled index/label count",
                expected: labeled_idx.len(),
                found: labels.len(),
            });
        }
        let n = features.nrows();
        let mut seen = vec![false; n];
        for &i in &labeled_idx {
            if i >= n {
                return Err(Error::invalid(format!("labeled index {i} out of range for {n} items")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("labeled index {i} repeated")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidClass {
                index: bad,
                classes: n_classes,
            });
        }
        Ok(Self {
            features,
            labeled_idx,
            labels,
            n_classes,
            input_shape,
            hidden_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Indices outside the labeled set. When every item is labeled the whole
    /// pool doubles as the unlabeled stream.
    pub fn unlabeled_idx(&self) -> Vec<usize> {
        let mut labeled = vec![false; self.len()];
        for &i in &self.labeled_idx {
            labeled[i] = true;
        }
        let rest: Vec<usize> = (0..self.len()).filter(|&i| !labeled[i]).collect();
        if rest.is_empty() {
            (0..self.len()).collect()
        } else {
            rest
        }
    }

    /// Classes without a single labeled example.
    pub fn missing_classes(&self) -> Vec<usize> {
        let mut present = vec![false; self.n_classes];
        for &y in &self.labels {
            present[y] = true;
        }
        (0..self.n_classes).filter(|&k| !present[k]).collect()
    }
}

// ---------------------------------------------------------------------------
// IDX

/// Raw contents of an IDX file with unsigned-byte elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_TYPE_U8: u8 = 0x08;

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            needed: 4,
            found: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::BadMagic(bytes[0], bytes[1]));
    }
    if bytes[2] != IDX_TYPE_U8 {
        return Err(IdxError::UnsupportedType(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            needed: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let needed = header + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..needed].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_TYPE_U8, array.dims.len() as u8];
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx(&bytes)?)
}

pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_idx(array)).map_err(|e| Error::io(path, e))
}

fn idx_to_features(array: &IdxArray) -> Result<(Array2<f64>, Vec<usize>)> {
    let (&n, item_shape) = array
        .dims
        .split_first()
        .ok_or_else(|| Error::invalid("idx file has no dimensions"))?;
    let width: usize = item_shape.iter().product();
    let pixels: Vec<f64> = array.data.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Array2::from_shape_vec((n, width), pixels).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((features, item_shape.to_vec()))
}

/// Loads an IDX image file; the first dimension indexes items and pixels are
/// scaled from `0..=255` to `[0, 1]`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Dataset> {
    let array = read_idx(path)?;
    let (features, shape) = idx_to_features(&array)?;
    let shape = if shape.is_empty() { vec![1] } else { shape };
    Dataset::new(features, None, 0, shape)
}

/// Loads an image file together with its label file.
pub fn load_idx_labeled(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let mut data = load_idx(images)?;
    let raw = read_idx(labels)?;
    if raw.data.len() != data.len() {
        return Err(IdxError::CountMismatch {
            images: data.len(),
            labels: raw.data.len(),
        }
        .into());
    }
    let labels: Vec<usize> = raw.data.iter().map(|&b| b as usize).collect();
    data.n_classes = labels.iter().max().map_or(0, |m| m + 1);
    data.labels = Some(labels);
    Ok(data)
}

/// Train and test splits from a directory with the standard MNIST file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx_labeled(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let mut test = load_idx_labeled(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    test.n_classes = test.n_classes.max(train.n_classes);
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Synthetic blobs

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// `K × N`, one class center per row.
    pub centers: Array2<f64>,
    /// Per-coordinate standard deviation around each center.
    pub spread: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `k` centers drawn uniformly from `[0.25, 0.75]^n` with `center_seed`.
    pub fn random_centers(k: usize, n: usize, spread: f64, samples_per_class: usize, center_seed: u64, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(center_seed);
        let centers = Array2::from_shape_simple_fn((k, n), || rng.gen_range(0.25..0.75));
        Self {
            centers,
            spread,
            samples_per_class,
            seed,
        }
    }

    /// The three-blob, 20-dimensional benchmark; `samples_per_class` points per class.
    pub fn benchmark(samples_per_class: usize, seed: u64) -> Self {
        Self::random_centers(3, 20, 0.1, samples_per_class, 7, seed)
    }

    pub fn n_classes(&self) -> usize {
        self.centers.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::invalid("synthetic data needs K >= 2"));
        }
        if !(self.spread > 0.0) {
            return Err(Error::invalid("synthetic spread must be positive"));
        }
        Ok(())
    }
}

/// Gaussian blobs around the spec's centers, in shuffled order.
pub fn make_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.n_classes();
    let n = spec.ambient_dim();
    let total = k * spec.samples_per_class;
    let mut order: Vec<usize> = (0..total).map(|i| i / spec.samples_per_class).collect();
    order.shuffle(rng);
    let mut features = Array2::zeros((total, n));
    for (mut row, &class) in features.rows_mut().into_iter().zip(&order) {
        for (x, c) in row.iter_mut().zip(spec.centers.row(class)) {
            let eps: f64 = StandardNormal.sample(rng);
            *x = c + spec.spread * eps;
        }
    }
    Dataset::new(features, Some(order), k, vec![n])
}

/// Marks `n_labeled` items as labeled. Stratified mode spreads them evenly
/// over the classes; leftovers go to randomly chosen classes.
pub fn split_semi<R: Rng + ?Sized>(data: &Dataset, n_labeled: usize, stratified: bool, rng: &mut R) -> Result<SemiDataset> {
    let labels = data.require_labels()?;
    let n = data.len();
    if n_labeled > n {
        return Err(Error::invalid(format!("asked for {n_labeled} labels from {n} items")));
    }
    let k = data.n_classes;
    let mut chosen: Vec<usize> = if stratified {
        if n_labeled < k {
            return Err(Error::invalid(format!(
                "stratified split needs at least one label per class ({n_labeled} < {k})"
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut quota = vec![n_labeled / k; k];
        let mut classes: Vec<usize> = (0..k).collect();
        classes.shuffle(rng);
        for &c in classes.iter().take(n_labeled % k) {
            quota[c] += 1;
        }
        let mut out = Vec::with_capacity(n_labeled);
        for (c, members) in by_class.iter_mut().enumerate() {
            if members.len() < quota[c] {
                return Err(Error::invalid(format!(
                    "class {c} has {} items, fewer than its quota {}",
                    members.len(),
                    quota[c]
                )));
            }
            members.shuffle(rng);
            out.extend_from_slice(&members[..quota[c]]);
        }
        out
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        all.truncate(n_labeled);
        all
    };
    chosen.sort_unstable();
    let chosen_labels = chosen.iter().map(|&i| labels[i]).collect();
    let mut semi = SemiDataset::new(data.features.clone(), chosen, chosen_labels, k, data.input_shape.clone())?;
    semi.hidden_labels = Some(labels.to_vec());
    Ok(semi)
}

/// Per-class feature means; rows of classes without items are zero.
pub fn class_means(data: &Dataset) -> Result<Array2<f64>> {
    let labels = data.require_labels()?;
    let mut sums = Array2::zeros((data.n_classes, data.dim()));
    let mut counts = vec![0usize; data.n_classes];
    for (row, &y) in data.features.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(y);
        s += &row;
        counts[y] += 1;
    }
    for (mut s, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    Ok(sums)
}

pub fn class_counts(labels: &[usize], k: usize) -> Array1<usize> {
    let mut counts = Array1::zeros(k);
    for &y in labels {
        counts[y] += 1;
    }
    counts
}
