//! Latent-space manipulations: interpolation, style transfer between
//! components, class-intensity shifts, and class-conditional generation.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm::GaussianMixturePrior;
use crate::trainer::ModelState;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Array1<f64>,
    pub source_class: Option<usize>,
    /// The untransferred code and its component, kept by [`style_transfer`]
    /// so that moving between components never accumulates rounding.
    anchor: Option<(Array1<f64>, usize)>,
}

impl LatentCode {
    pub fn new(z: Array1<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code entry".into()));
        }
        Ok(Self {
            z,
            source_class: None,
            anchor: None,
        })
    }

    pub fn with_class(z: Array1<f64>, class: usize) -> Result<Self> {
        Ok(Self {
            source_class: Some(class),
            ..Self::new(z)?
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "latent code",
                expected: d,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

/// `(1 − t) z1 + t z2` for `t ∈ [0, 1]`.
pub fn interpolate(z1: &LatentCode, z2: &LatentCode, t: f64) -> Result<LatentCode> {
    z2.check_dim(z1.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation parameter {t} outside [0, 1]")));
    }
    let z = if t == 0.0 {
        z1.z.clone()
    } else if t == 1.0 {
        z2.z.clone()
    } else {
        &z1.z * (1.0 - t) + &z2.z * t
    };
    Ok(LatentCode {
        z,
        source_class: None,
        anchor: None,
    })
}

/// `steps` evenly spaced interpolates from `z1` to `z2`, endpoints included.
pub fn interpolation_path(z1: &LatentCode, z2: &LatentCode, steps: usize) -> Result<Vec<LatentCode>> {
    if steps < 2 {
        return Err(Error::invalid(format!("path needs at least 2 steps, got {steps}")));
    }
    (0..steps)
        .map(|i| interpolate(z1, z2, i as f64 / (steps - 1) as f64))
        .collect()
}

/// The explicit source wins; otherwise the code's annotation, otherwise the
/// prior's classification of `z`.
pub fn resolve_source(z: &LatentCode, source: Option<usize>, prior: &GaussianMixturePrior) -> Result<usize> {
    match source.or(z.source_class) {
        Some(s) => {
            prior.check_class(s)?;
            Ok(s)
        }
        None => prior.classify(z.z.view()),
    }
}

/// `z + μ_target − μ_source`; the result is annotated with `target`.
///
/// Transferring back to the original component returns the original code
/// bit for bit.
pub fn style_transfer(z: &LatentCode, source: usize, target: usize, prior: &GaussianMixturePrior) -> Result<LatentCode> {
    z.check_dim(prior.dim())?;
    prior.check_class(source)?;
    prior.check_class(target)?;
    let (origin, origin_class) = match &z.anchor {
        Some((origin, class)) if z.source_class == Some(source) => (origin.clone(), *class),
        _ => (z.z.clone(), source),
    };
    let moved = if target == origin_class {
        origin.clone()
    } else {
        &origin + &prior.mean(target)? - prior.mean(origin_class)?
    };
    Ok(LatentCode {
        z: moved,
        source_class: Some(target),
        anchor: Some((origin, origin_class)),
    })
}

/// Linear path from `z` to its style transfer, endpoints included.
pub fn transfer_path(
    z: &LatentCode,
    source: usize,
    target: usize,
    prior: &GaussianMixturePrior,
    steps: usize,
) -> Result<Vec<LatentCode>> {
    let end = style_transfer(z, source, target, prior)?;
    let mut path = interpolation_path(z, &end, steps)?;
    path[0] = z.clone();
    path[steps - 1] = end;
    Ok(path)
}

/// `z + α (μ_source − μ_anti_target)`: moves `z` away from the anti-target.
pub fn class_intensity(
    z: &LatentCode,
    source: usize,
    anti_target: usize,
    alpha: f64,
    prior: &GaussianMixturePrior,
) -> Result<LatentCode> {
    z.check_dim(prior.dim())?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("intensity alpha must be finite and >= 0, got {alpha}")));
    }
    let direction = &prior.mean(source)? - &prior.mean(anti_target)?;
    Ok(LatentCode {
        z: &z.z + &(direction * alpha),
        source_class: Some(source),
        anchor: None,
    })
}

/// Decodes `n` draws from component `k`.
pub fn generate_class<R: Rng + ?Sized>(model: &ModelState, k: usize, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    let codes = model.prior.sample_component(k, n, rng)?;
    if n == 0 {
        return Ok(Array2::zeros((0, model.input_dim())));
    }
    model.decode(codes.view())
}

pub fn decode_codes(model: &ModelState, codes: &[LatentCode]) -> Result<Array2<f64>> {
    let d = model.latent_dim();
    let mut z = Array2::zeros((codes.len(), d));
    for (mut row, c) in z.rows_mut().into_iter().zip(codes) {
        c.check_dim(d)?;
        row.assign(&c.z);
    }
    if codes.is_empty() {
        return Ok(Array2::zeros((0, model.input_dim())));
    }
    model.decode(z.view())
}

pub fn encode_one(model: &ModelState, x: ArrayView1<f64>) -> Result<LatentCode> {
    model.check_dims(Some(x.len()), None)?;
    let z = model.encode(x.insert_axis(ndarray::Axis(0)))?;
    let code = z.row(0).to_owned();
    let class = model.prior.classify(code.view())?;
    LatentCode::with_class(code, class)
}
