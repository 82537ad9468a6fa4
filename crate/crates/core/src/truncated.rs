//! Truncated normal moments and conditional covariance under benchmark truncation.
//!
//! Conditioning a Gaussian vector on its first coordinate falling in a
//! quantile band only changes the covariance along `β βᵀ`, where `β` holds the
//! regression coefficients of every coordinate on the benchmark. The band's
//! effect is therefore summarised by one number, the conditional benchmark
//! variance, which [`truncated_moments_std`] computes in closed form.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{quantile_unchecked, std_cdf, std_pdf};
use crate::quadrature::gauss_legendre_unit;

/// Mean vector and SPD covariance (or scale) matrix of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct GaussianModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<ModelRepr> for GaussianModel {
    type Error = Error;

    fn try_from(repr: ModelRepr) -> Result<Self> {
        let sigma = crate::matrix_serde::from_rows(&repr.sigma)?;
        GaussianModel::new(DVector::from_vec(repr.mu), sigma)
    }
}

impl From<GaussianModel> for ModelRepr {
    fn from(m: GaussianModel) -> Self {
        ModelRepr {
            mu: m.mu.iter().copied().collect(),
            sigma: crate::matrix_serde::to_rows(&m.sigma),
        }
    }
}

impl GaussianModel {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty mean vector".into()));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {n} but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        check_spd(&sigma)?;
        Ok(Self { mu, sigma })
    }

    /// Zero mean, covariance `sigma`.
    pub fn centered(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        Self::new(DVector::zeros(n), sigma)
    }

    /// Standard bivariate normal with correlation `r`.
    pub fn bivariate(r: f64) -> Result<Self> {
        Self::centered(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

/// Symmetry to a relative tolerance plus a successful Cholesky factorisation.
pub(crate) fn check_spd(sigma: &DMatrix<f64>) -> Result<()> {
    if !sigma.is_square() {
        return Err(Error::NotPositiveDefinite("matrix is not square".into()));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entry".into()));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    let n = sigma.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotPositiveDefinite(format!(
                    "asymmetric at ({i}, {j}): {} vs {}",
                    sigma[(i, j)],
                    sigma[(j, i)]
                )));
            }
        }
    }
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("Cholesky factorisation failed".into()));
    }
    Ok(())
}

/// Quantile band `[q1, q2]` of the benchmark coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct QuantileInterval {
    q1: f64,
    q2: f64,
}

impl QuantileInterval {
    pub fn new(q1: f64, q2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q1) || !(0.0..=1.0).contains(&q2) || q1 >= q2 {
            return Err(Error::InvalidInterval { q1, q2 });
        }
        Ok(Self { q1, q2 })
    }

    /// The whole population, `[0, 1]`.
    pub fn full() -> Self {
        Self { q1: 0.0, q2: 1.0 }
    }

    /// Lower tail `[0, q]`.
    pub fn lower(q: f64) -> Result<Self> {
        Self::new(0.0, q)
    }

    /// Symmetric centre `[q, 1 - q]`.
    pub fn center(q: f64) -> Result<Self> {
        Self::new(q, 1.0 - q)
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn mass(&self) -> f64 {
        self.q2 - self.q1
    }

    /// Standardised endpoints `(Φ⁻¹(q1), Φ⁻¹(q2))`, infinite at 0 and 1.
    pub fn standardized(&self) -> (f64, f64) {
        (quantile_unchecked(self.q1), quantile_unchecked(self.q2))
    }
}

impl TryFrom<(f64, f64)> for QuantileInterval {
    type Error = Error;

    fn try_from((q1, q2): (f64, f64)) -> Result<Self> {
        Self::new(q1, q2)
    }
}

impl From<QuantileInterval> for (f64, f64) {
    fn from(i: QuantileInterval) -> Self {
        (i.q1, i.q2)
    }
}

impl fmt::Display for QuantileInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.q1, self.q2)
    }
}

/// Mean and variance of a standard normal truncated to an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Which dependence statistic a [`ConditionalMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Covariance,
    Correlation,
    Spearman,
    Kendall,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 4] = [
        MatrixKind::Covariance,
        MatrixKind::Correlation,
        MatrixKind::Spearman,
        MatrixKind::Kendall,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixKind::Covariance => "covariance",
            MatrixKind::Correlation => "correlation",
            MatrixKind::Spearman => "spearman",
            MatrixKind::Kendall => "kendall",
        }
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "covariance" | "cov" => Ok(MatrixKind::Covariance),
            "correlation" | "corr" | "r" => Ok(MatrixKind::Correlation),
            "spearman" | "rho" => Ok(MatrixKind::Spearman),
            "kendall" | "tau" => Ok(MatrixKind::Kendall),
            other => Err(Error::Config(format!("unknown matrix kind `{other}`"))),
        }
    }
}

/// A dependence matrix of one truncation group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatrix {
    pub kind: MatrixKind,
    pub interval: QuantileInterval,
    #[serde(with = "crate::matrix_serde")]
    pub matrix: DMatrix<f64>,
}

impl ConditionalMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Regression coefficients `βᵢ = σ₁ᵢ / σ₁₁` of every coordinate on the benchmark.
pub fn beta_vector(model: &GaussianModel) -> Result<DVector<f64>> {
    let s11 = model.sigma[(0, 0)];
    if s11 <= 0.0 || !s11.is_finite() {
        return Err(Error::DegenerateBenchmark(s11));
    }
    let mut beta = model.sigma.row(0).transpose() / s11;
    beta[0] = 1.0;
    Ok(beta)
}

/// Moments of `Z | a < Z < b` for standard normal `Z`; `a` may be `-∞` and `b` may be `+∞`.
///
/// Intervals whose mass falls below 1e-12 are rejected: the ratio formulas
/// lose all significance there.
pub fn truncated_moments_std(a: f64, b: f64) -> Result<TruncatedMoments> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::Domain {
            what: "truncated_moments_std",
            value: a,
            expected: "a < b",
        });
    }
    // Work in the half-line closer to the tail of interest so the mass and the
    // density terms are all computed from small, accurate numbers.
    if a > -b {
        let m = truncated_moments_std(-b, -a)?;
        return Ok(TruncatedMoments {
            mean: -m.mean,
            variance: m.variance,
        });
    }
    let mass = if b <= 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        1.0 - std_cdf(a) - std_cdf(-b)
    };
    if !(mass >= 1e-12) {
        return Err(Error::EmptyInterval { a, b, mass });
    }
    if b - a < NARROW_BAND {
        return Ok(narrow_band_moments(a, b));
    }
    let (pa, pb) = (std_pdf(a), std_pdf(b));
    let apa = if a.is_infinite() { 0.0 } else { a * pa };
    let bpb = if b.is_infinite() { 0.0 } else { b * pb };
    let mean = (pa - pb) / mass;
    // 1 + (aφ(a) − bφ(b))/Z − mean², summed with compensation; the mean² term
    // carries its own rounding error through an fma.
    let sq = mean * mean;
    let sq_err = mean.mul_add(mean, -sq);
    let variance = compensated_sum(&[1.0, apa / mass, -bpb / mass, -sq, -sq_err]);
    Ok(TruncatedMoments { mean, variance })
}

/// Bands narrower than this are integrated about their midpoint; the
/// closed form cancels to nothing as the variance shrinks like width².
const NARROW_BAND: f64 = 1.0;

/// Moments from the density `∝ exp(−c·u − u²/2)` of `u = Z − c` on `[−h, h]`.
fn narrow_band_moments(a: f64, b: f64) -> TruncatedMoments {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = RULE.get_or_init(|| gauss_legendre_unit(64));
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (&t, &w) in nodes.iter().zip(weights) {
        let u = h * (2.0 * t - 1.0);
        let e = w * (-c * u - 0.5 * u * u).exp();
        m0 += e;
        m1 += e * u;
        m2 += e * u * u;
    }
    let shift = m1 / m0;
    TruncatedMoments {
        mean: c + shift,
        variance: m2 / m0 - shift * shift,
    }
}

/// Neumaier summation.
fn compensated_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

/// Standardised moments of the benchmark on a quantile band.
pub fn interval_moments(interval: &QuantileInterval) -> Result<TruncatedMoments> {
    let (a, b) = interval.standardized();
    truncated_moments_std(a, b)
}

/// Conditional covariance `Σ_B = Σ + (v_B − σ₁₁) β βᵀ` of the band `interval`.
pub fn conditional_covariance(
    model: &GaussianModel,
    interval: &QuantileInterval,
) -> Result<ConditionalMatrix> {
    let beta = beta_vector(model)?;
    let s11 = model.sigma[(0, 0)];
    let v_std = interval_moments(interval)?.variance;
    let shift = s11 * v_std - s11;
    let mut matrix = &model.sigma + &beta * beta.transpose() * shift;
    matrix[(0, 0)] = s11 * v_std;
    let n = matrix.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    Ok(ConditionalMatrix {
        kind: MatrixKind::Covariance,
        interval: *interval,
        matrix,
    })
}

/// Correlation form of [`conditional_covariance`]; diagonal is exactly one.
pub fn conditional_correlation(
    model: &GaussianModel,
    interval: &QuantileInterval,
) -> Result<ConditionalMatrix> {
    let cov = conditional_covariance(model, interval)?;
    Ok(ConditionalMatrix {
        kind: MatrixKind::Correlation,
        interval: *interval,
        matrix: covariance_to_correlation(&cov.matrix)?,
    })
}

pub(crate) fn covariance_to_correlation(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let v = cov[(i, i)];
        if v <= 1e-12 * scale {
            return Err(Error::ZeroVariance { index: i, value: v });
        }
        sd.push(v.sqrt());
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    }))
}
