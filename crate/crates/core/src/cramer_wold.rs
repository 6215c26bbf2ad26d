//! Closed-form Cramer-Wold scalar products and distances.
//!
//! Every quantity here is built from one kernel: the Cramer-Wold scalar
//! product of two spherical Gaussians `N(a, αI)` and `N(b, βI)` smoothed with
//! bandwidth `γ`,
//!
//! ```text
//! <N(a,αI), N(b,βI)>_γ = (2π(α+β+2γ))^{-1/2} · φ_D(‖a−b‖² / (2(α+β+2γ)))
//! φ_D(s) ≈ (1 + 4s/(2D−3))^{-1/2}
//! ```
//!
//! A sample `z_1..z_m` is treated as the uniform mixture of Dirac atoms
//! (Gaussians with variance 0), which turns the squared distance between the
//! sample and a Gaussian mixture into three finite double sums.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Tolerance on `Σ p_k = 1`.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGaussian {
    pub mean: Array1<f64>,
    /// Variance of every coordinate; 0 encodes a Dirac atom.
    pub variance: f64,
}

impl SphericalGaussian {
    pub fn new(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::invalid(format!("variance must be >= 0, got {variance}")));
        }
        if mean.is_empty() {
            return Err(Error::invalid("gaussian mean must have dimension >= 1"));
        }
        Ok(Self { mean, variance })
    }

    pub fn atom(point: Array1<f64>) -> Self {
        Self {
            mean: point,
            variance: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Borrowed view of a mixture of spherical Gaussians.
#[derive(Debug, Clone, Copy)]
pub struct MixtureRef<'a> {
    pub masses: &'a [f64],
    /// `K × D`, one component mean per row.
    pub means: ArrayView2<'a, f64>,
    pub variances: &'a [f64],
}

impl<'a> MixtureRef<'a> {
    pub fn new(masses: &'a [f64], means: ArrayView2<'a, f64>, variances: &'a [f64]) -> Result<Self> {
        let k = masses.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.nrows() != k {
            return Err(Error::DimensionMismatch {
                what: "mixture means rows",
                expected: k,
                found: means.nrows(),
            });
        }
        if variances.len() != k {
            return Err(Error::DimensionMismatch {
                what: "mixture variances",
                expected: k,
                found: variances.len(),
            });
        }
        if masses.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("mixture masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassesNotNormalized(total));
        }
        if variances.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("mixture variances must be nonnegative"));
        }
        Ok(Self {
            masses,
            means,
            variances,
        })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }
}

/// Owned mixture, convenient for tests and one-off evaluations.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub masses: Vec<f64>,
    pub means: Array2<f64>,
    pub variances: Vec<f64>,
}

impl Mixture {
    pub fn from_components(components: &[(f64, SphericalGaussian)]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let d = first.1.dim();
        let mut means = Array2::zeros((components.len(), d));
        for (row, (_, g)) in components.iter().enumerate() {
            if g.dim() != d {
                return Err(Error::DimensionMismatch {
                    what: "component dimension",
                    expected: d,
                    found: g.dim(),
                });
            }
            means.row_mut(row).assign(&g.mean);
        }
        let mix = Self {
            masses: components.iter().map(|(p, _)| *p).collect(),
            means,
            variances: components.iter().map(|(_, g)| g.variance).collect(),
        };
        mix.view()?;
        Ok(mix)
    }

    pub fn view(&self) -> Result<MixtureRef<'_>> {
        MixtureRef::new(&self.masses, self.means.view(), &self.variances)
    }
}

fn check_dim(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::invalid(format!(
            "latent dimension must be >= 2 for the Cramer-Wold kernel, got {d}"
        )));
    }
    Ok(4.0 / (2.0 * d as f64 - 3.0))
}

/// `φ_D(s) ≈ (1 + 4s/(2D−3))^{-1/2}`.
pub fn phi_d(s: f64, d: usize) -> Result<f64> {
    let c = check_dim(d)?;
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("phi_d argument {s}")));
    }
    if s < 0.0 {
        return Err(Error::invalid(format!("phi_d argument must be >= 0, got {s}")));
    }
    Ok(phi(s, c))
}

#[inline]
fn phi(s: f64, c: f64) -> f64 {
    1.0 / (1.0 + c * s).sqrt()
}

/// Derivative of `phi` with respect to `s`.
#[inline]
fn phi_prime(s: f64, c: f64) -> f64 {
    let base = 1.0 + c * s;
    -0.5 * c / (base * base.sqrt())
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scalar product from squared mean distance and summed variances.
#[inline]
fn kernel(sq: f64, var_sum: f64, gamma: f64, c: f64) -> f64 {
    let w = var_sum + 2.0 * gamma;
    phi(sq / (2.0 * w), c) / (TWO_PI * w).sqrt()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// Cramer-Wold scalar product of two spherical Gaussians.
pub fn cw_inner(g1: &SphericalGaussian, g2: &SphericalGaussian, gamma: f64) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            what: "gaussian dimension",
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    check_gamma(gamma)?;
    let c = check_dim(g1.dim())?;
    let sq = sq_dist(g1.mean.view(), g2.mean.view());
    Ok(kernel(sq, g1.variance + g2.variance, gamma, c))
}

/// Kernel between two points, i.e. the scalar product of two Dirac atoms.
pub fn cw_point_kernel(x: ArrayView1<f64>, y: ArrayView1<f64>, gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "point dimension",
            expected: x.len(),
            found: y.len(),
        });
    }
    check_gamma(gamma)?;
    let c = check_dim(x.len())?;
    Ok(kernel(sq_dist(x, y), 0.0, gamma, c))
}

fn check_sample(z: &ArrayView2<f64>) -> Result<()> {
    if z.nrows() == 0 {
        return Err(Error::invalid("latent sample is empty"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent sample entry".into()));
    }
    Ok(())
}

/// Row sums of the sample-sample kernel; rows are independent so they may be
/// computed in parallel, the final reduction is always sequential.
fn pairwise_row_sums(z: &ArrayView2<f64>, gamma: f64, c: f64) -> Vec<f64> {
    let m = z.nrows();
    let scale = 1.0 / (4.0 * gamma);
    (0..m)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            (0..m).map(|j| phi(sq_dist(zi, z.row(j)) * scale, c)).sum()
        })
        .collect()
}

/// Squared Cramer-Wold distance between a sample and `N(0, I)`.
pub fn cw_sq_dist_standard(z: ArrayView2<f64>, gamma: f64) -> Result<f64> {
    check_sample(&z)?;
    check_gamma(gamma)?;
    let d = z.ncols();
    let c = check_dim(d)?;
    let m = z.nrows() as f64;

    let pair: f64 = pairwise_row_sums(&z, gamma, c).iter().sum();
    let self_term = pair / (m * m * (TWO_PI * 2.0 * gamma).sqrt());

    let cross: f64 = z
        .rows()
        .into_iter()
        .map(|zi| kernel(zi.dot(&zi), 1.0, gamma, c))
        .sum();
    let standard = kernel(0.0, 2.0, gamma, c);
    Ok(self_term - 2.0 / m * cross + standard)
}

/// Squared Cramer-Wold distance between a sample and a mixture of spherical
/// Gaussians. The `i = j` diagonal of the sample-sample sum is included.
pub fn cw_sq_dist_mixture(z: ArrayView2<f64>, mixture: &MixtureRef, gamma: f64) -> Result<f64> {
    Ok(evaluate(z, mixture, gamma, false)?.value)
}

/// Analytic gradients of [`cw_sq_dist_mixture`].
#[derive(Debug, Clone)]
pub struct CwGrad {
    /// `m × D`, derivative with respect to each sample point.
    pub d_points: Array2<f64>,
    /// `K × D`, derivative with respect to each component mean.
    pub d_means: Array2<f64>,
}

pub fn cw_grad(z: ArrayView2<f64>, mixture: &MixtureRef, gamma: f64) -> Result<CwGrad> {
    Ok(evaluate(z, mixture, gamma, true)?
        .grad
        .expect("gradient requested"))
}

/// Distance and gradients from a single pass.
pub fn cw_sq_dist_with_grad(
    z: ArrayView2<f64>,
    mixture: &MixtureRef,
    gamma: f64,
) -> Result<(f64, CwGrad)> {
    let out = evaluate(z, mixture, gamma, true)?;
    Ok((out.value, out.grad.expect("gradient requested")))
}

struct Evaluation {
    value: f64,
    grad: Option<CwGrad>,
}

fn evaluate(
    z: ArrayView2<f64>,
    mixture: &MixtureRef,
    gamma: f64,
    with_grad: bool,
) -> Result<Evaluation> {
    check_sample(&z)?;
    check_gamma(gamma)?;
    let d = z.ncols();
    if mixture.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "mixture dimension",
            expected: d,
            found: mixture.dim(),
        });
    }
    let c = check_dim(d)?;
    let m = z.nrows();
    let mf = m as f64;
    let k = mixture.len();
    let means = mixture.means;

    // Sample-sample term.
    let pair_scale = 1.0 / (mf * mf * (TWO_PI * 2.0 * gamma).sqrt());
    let pair: f64 = pairwise_row_sums(&z, gamma, c).iter().sum();
    let mut value = pair * pair_scale;

    // Sample-component cross term, -Σ_i Σ_k 2 p_k/(m √(2π w_k)) φ(‖z_i−μ_k‖²/(2 w_k)).
    let cross_w: Vec<f64> = mixture.variances.iter().map(|v| v + 2.0 * gamma).collect();
    let cross_coef: Vec<f64> = (0..k)
        .map(|kk| 2.0 * mixture.masses[kk] / (mf * (TWO_PI * cross_w[kk]).sqrt()))
        .collect();
    let mut cross = 0.0;
    for zi in z.rows() {
        for kk in 0..k {
            let s = sq_dist(zi, means.row(kk)) / (2.0 * cross_w[kk]);
            cross += cross_coef[kk] * phi(s, c);
        }
    }
    value -= cross;

    // Component-component term; constant in the sample.
    let mut comp = 0.0;
    for a in 0..k {
        for b in 0..k {
            let w = mixture.variances[a] + mixture.variances[b] + 2.0 * gamma;
            let s = sq_dist(means.row(a), means.row(b)) / (2.0 * w);
            comp += mixture.masses[a] * mixture.masses[b] * phi(s, c) / (TWO_PI * w).sqrt();
        }
    }
    value += comp;

    if !with_grad {
        return Ok(Evaluation { value, grad: None });
    }

    let mut d_points = Array2::<f64>::zeros((m, d));
    let mut d_means = Array2::<f64>::zeros((k, d));

    // ∂/∂z_i of the pairwise term: (A/γ) Σ_j φ'(s_ij)(z_i − z_j).
    let pair_grad_scale = pair_scale / gamma;
    let inv4g = 1.0 / (4.0 * gamma);
    let rows: Vec<Array1<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            let mut acc = Array1::<f64>::zeros(d);
            for j in 0..m {
                if i == j {
                    continue;
                }
                let zj = z.row(j);
                let w = phi_prime(sq_dist(zi, zj) * inv4g, c) * pair_grad_scale;
                for ((a, x), y) in acc.iter_mut().zip(zi.iter()).zip(zj.iter()) {
                    *a += w * (x - y);
                }
            }
            acc
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        d_points.row_mut(i).assign(&row);
    }

    for (i, zi) in z.rows().into_iter().enumerate() {
        for kk in 0..k {
            let mu = means.row(kk);
            let wk = cross_w[kk];
            let s = sq_dist(zi, mu) / (2.0 * wk);
            let w = cross_coef[kk] * phi_prime(s, c) / wk;
            let diff = &zi - &mu;
            d_points.row_mut(i).scaled_add(-w, &diff);
            d_means.row_mut(kk).scaled_add(w, &diff);
        }
    }

    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let w = mixture.variances[a] + mixture.variances[b] + 2.0 * gamma;
            let s = sq_dist(means.row(a), means.row(b)) / (2.0 * w);
            let coef = mixture.masses[a] * mixture.masses[b] / (TWO_PI * w).sqrt();
            let g = 2.0 * coef * phi_prime(s, c) / w;
            let diff = &means.row(a) - &means.row(b);
            d_means.row_mut(a).scaled_add(g, &diff);
        }
    }

    Ok(Evaluation {
        value,
        grad: Some(CwGrad { d_points, d_means }),
    })
}

/// Silverman bandwidth `γ = (4/(3 n_c))^{2/5}` for `n_c` samples per class.
pub fn silverman_gamma(n_c: usize) -> Result<f64> {
    if n_c == 0 {
        return Err(Error::invalid("silverman_gamma needs n_c >= 1"));
    }
    Ok((4.0 / (3.0 * n_c as f64)).powf(0.4))
}

/// Column means of a sample, handy for centering tests.
pub fn sample_mean(z: ArrayView2<f64>) -> Option<Array1<f64>> {
    z.mean_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    fn e1(d: usize) -> Array1<f64> {
        let mut v = Array1::zeros(d);
        v[0] = 1.0;
        v
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi_d(0.0, 10).unwrap(), 1.0);
        assert_abs_diff_eq!(phi_d(1.0, 10).unwrap(), 0.899_735_410_842_437, epsilon = 1e-12);
        assert_abs_diff_eq!(phi_d(0.25, 10).unwrap(), 0.971_825_315_807_550, epsilon = 1e-12);
    }

    #[test]
    fn phi_rejects_bad_input() {
        assert!(phi_d(f64::NAN, 10).is_err());
        assert!(phi_d(f64::INFINITY, 10).is_err());
        assert!(phi_d(1.0, 1).is_err());
        assert!(phi_d(-1.0, 10).is_err());
        assert!(phi_d(1.0, 2).is_ok());
    }

    #[test]
    fn inner_values() {
        let a = SphericalGaussian::atom(Array1::zeros(10));
        let v = cw_inner(&a, &a, 0.5).unwrap();
        assert_abs_diff_eq!(v, 0.398_942_280_401_433, epsilon = 1e-12);

        let b = SphericalGaussian::atom(e1(10));
        let v = cw_inner(&a, &b, 1.0).unwrap();
        assert_abs_diff_eq!(v, 0.274_146_860_103_314, epsilon = 1e-12);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = SphericalGaussian::atom(Array1::zeros(10));
        let b = SphericalGaussian::atom(Array1::zeros(11));
        assert!(matches!(
            cw_inner(&a, &b, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn standard_matches_single_component_mixture() {
        let z = randn(40, 10, 3);
        let mix = Mixture {
            masses: vec![1.0],
            means: Array2::zeros((1, 10)),
            variances: vec![1.0],
        };
        let a = cw_sq_dist_standard(z.view(), 0.3).unwrap();
        let b = cw_sq_dist_mixture(z.view(), &mix.view().unwrap(), 0.3).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn shifted_sample_is_farther() {
        let near = randn(64, 10, 11);
        let mut far = randn(64, 10, 12);
        far.column_mut(0).mapv_inplace(|v| v + 5.0);
        let g = silverman_gamma(30).unwrap();
        let dn = cw_sq_dist_standard(near.view(), g).unwrap();
        let df = cw_sq_dist_standard(far.view(), g).unwrap();
        assert!(df > dn, "{df} <= {dn}");
    }

    #[test]
    fn empty_sample_rejected() {
        let z = Array2::<f64>::zeros((0, 10));
        assert!(cw_sq_dist_standard(z.view(), 1.0).is_err());
    }

    #[test]
    fn masses_must_sum_to_one() {
        let means = Array2::zeros((2, 10));
        let vars = [1.0, 1.0];
        let masses = [0.5, 0.6];
        assert!(matches!(
            MixtureRef::new(&masses, means.view(), &vars),
            Err(Error::MassesNotNormalized(_))
        ));
    }

    #[test]
    fn translation_invariance() {
        let z = randn(30, 10, 5);
        let means = randn(3, 10, 6);
        let masses = [0.2, 0.3, 0.5];
        let vars = [1.0, 0.5, 2.0];
        let shift = randn(1, 10, 7).row(0).to_owned();
        let z2 = &z + &shift;
        let means2 = &means + &shift;
        let a = cw_sq_dist_mixture(
            z.view(),
            &MixtureRef::new(&masses, means.view(), &vars).unwrap(),
            0.4,
        )
        .unwrap();
        let b = cw_sq_dist_mixture(
            z2.view(),
            &MixtureRef::new(&masses, means2.view(), &vars).unwrap(),
            0.4,
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_sample_gives_zero_mean_gradient() {
        let half = randn(10, 10, 9);
        let mu = array![[0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.0, 0.1, -0.1]];
        let mut z = Array2::zeros((20, 10));
        for i in 0..10 {
            z.row_mut(i).assign(&(&mu.row(0) + &half.row(i)));
            z.row_mut(10 + i).assign(&(&mu.row(0) - &half.row(i)));
        }
        let masses = [1.0];
        let vars = [1.0];
        let g = cw_grad(z.view(), &MixtureRef::new(&masses, mu.view(), &vars).unwrap(), 0.3).unwrap();
        for v in g.d_means.iter() {
            assert!(v.abs() < 1e-10, "{v}");
        }
    }

    /// Central differences of the closed form, computed independently of the
    /// analytic gradient path.
    fn numeric_grad(z: &Array2<f64>, means: &Array2<f64>, masses: &[f64], vars: &[f64], gamma: f64) -> (Array2<f64>, Array2<f64>) {
        let h = 1e-5;
        let f = |z: &Array2<f64>, mu: &Array2<f64>| {
            cw_sq_dist_mixture(z.view(), &MixtureRef::new(masses, mu.view(), vars).unwrap(), gamma).unwrap()
        };
        let mut dz = Array2::zeros(z.raw_dim());
        for idx in ndarray::indices(z.raw_dim()) {
            let mut p = z.clone();
            p[idx] += h;
            let mut q = z.clone();
            q[idx] -= h;
            dz[idx] = (f(&p, means) - f(&q, means)) / (2.0 * h);
        }
        let mut dm = Array2::zeros(means.raw_dim());
        for idx in ndarray::indices(means.raw_dim()) {
            let mut p = means.clone();
            p[idx] += h;
            let mut q = means.clone();
            q[idx] -= h;
            dm[idx] = (f(z, &p) - f(z, &q)) / (2.0 * h);
        }
        (dz, dm)
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let z = randn(8, 10, 100 + seed);
            let means = randn(2, 10, 200 + seed);
            let masses = [0.35, 0.65];
            let vars = [1.0, 1.0];
            let gamma = silverman_gamma(4).unwrap();
            let g = cw_grad(z.view(), &MixtureRef::new(&masses, means.view(), &vars).unwrap(), gamma).unwrap();
            let (dz, dm) = numeric_grad(&z, &means, &masses, &vars, gamma);
            assert!(max_rel(&g.d_points, &dz) < 1e-6, "dz err {}", max_rel(&g.d_points, &dz));
            assert!(max_rel(&g.d_means, &dm) < 1e-6, "dm err {}", max_rel(&g.d_means, &dm));
        }
    }

    #[test]
    fn value_and_grad_agree_with_separate_calls() {
        let z = randn(12, 10, 1);
        let means = randn(3, 10, 2);
        let masses = [0.2, 0.2, 0.6];
        let vars = [1.0; 3];
        let mix = MixtureRef::new(&masses, means.view(), &vars).unwrap();
        let (v, g) = cw_sq_dist_with_grad(z.view(), &mix, 0.5).unwrap();
        assert_eq!(v, cw_sq_dist_mixture(z.view(), &mix, 0.5).unwrap());
        assert_eq!(g.d_points, cw_grad(z.view(), &mix, 0.5).unwrap().d_points);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let z = randn(16, 10, 21);
        let means = randn(3, 10, 22);
        let masses = [0.5, 0.25, 0.25];
        let vars = [1.0; 3];
        let g = cw_grad(z.view(), &MixtureRef::new(&masses, means.view(), &vars).unwrap(), 0.7).unwrap();
        let total = g.d_points.sum_axis(Axis(0)) + g.d_means.sum_axis(Axis(0));
        for v in total.iter() {
            assert!(v.abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn silverman_values() {
        assert_abs_diff_eq!(silverman_gamma(30).unwrap(), 0.287_823_992_251_104, epsilon = 1e-12);
        assert_abs_diff_eq!(silverman_gamma(1).unwrap(), 1.121_955_145_446_199, epsilon = 1e-12);
        assert!(silverman_gamma(0).is_err());
        for n in 1..200 {
            assert!(silverman_gamma(n + 1).unwrap() < silverman_gamma(n).unwrap());
        }
    }

    proptest! {
        #[test]
        fn phi_decreasing(d in 2usize..64, s in 0.0f64..100.0, ds in 1e-6f64..10.0) {
            prop_assert!(phi_d(s + ds, d).unwrap() < phi_d(s, d).unwrap());
            prop_assert_eq!(phi_d(0.0, d).unwrap(), 1.0);
        }

        #[test]
        fn inner_symmetric_and_positive(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            va in 0.0f64..3.0, vb in 0.0f64..3.0, gamma in 0.01f64..5.0,
        ) {
            let g1 = SphericalGaussian::new(Array1::from(a), va).unwrap();
            let g2 = SphericalGaussian::new(Array1::from(b), vb).unwrap();
            let x = cw_inner(&g1, &g2, gamma).unwrap();
            let y = cw_inner(&g2, &g1, gamma).unwrap();
            prop_assert!(x > 0.0);
            prop_assert_eq!(x, y);
        }

        #[test]
        fn mixture_distance_nonnegative(
            seed in 0u64..10_000, m in 1usize..24, k in 1usize..5,
            gamma in 0.05f64..3.0, spread in 0.1f64..4.0,
        ) {
            let z = randn(m, 10, seed) * spread;
            let means = randn(k, 10, seed + 1) * 2.0;
            let mut masses: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
            let total: f64 = masses.iter().sum();
            masses.iter_mut().for_each(|p| *p /= total);
            let vars = vec![1.0; k];
            let mix = MixtureRef::new(&masses, means.view(), &vars).unwrap();
            prop_assert!(cw_sq_dist_mixture(z.view(), &mix, gamma).unwrap() >= -1e-12);
        }
    }
}
