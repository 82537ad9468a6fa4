//! Monte Carlo engine for elliptic populations.
//!
//! Draws follow the stochastic representation `X = μ + L·R·U`, where `L` is
//! the Cholesky factor of the scale matrix, `U` is uniform on the unit sphere
//! and `R ≥ 0` is an independent radius. `R = √χ²(n)` recovers the
//! multivariate normal and `R = √(n·F(n, ν))` the multivariate Student t.
//!
//! Every sample is generated in fixed-size chunks. Chunk `c` draws from the
//! ChaCha20 stream `c` of the user seed, so a block is bit-identical whatever
//! the worker count.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, FisherF, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{conditional_matrix_with_order, SampleOrder};
use crate::error::{Error, Result};
use crate::roots::golden_section_min;
use crate::sample::SampleBlock;
use crate::truncated::{check_spd, ConditionalMatrix, MatrixKind, QuantileInterval};

pub use crate::empirical::empirical_conditional_matrix;

/// Draws per generator stream.
pub const CHUNK: usize = 8192;

/// Recorded in every generated [`SampleBlock`].
pub const GENERATOR_ID: &str = "chacha20-stream-per-8192-draws/rand_distr-0.4";

/// User-supplied radial law.
pub trait RadialSampler: Send + Sync {
    fn sample(&self, rng: &mut dyn RngCore) -> f64;

    /// Short label used in sample metadata.
    fn label(&self) -> String;
}

/// Law of the radius `R` in the elliptic representation.
#[derive(Clone)]
pub enum RadialDistribution {
    /// `R = √χ²(n)`: multivariate normal.
    ChiForNormal { n: usize },
    /// `R = √(n·F)`, `F ~ Fisher(n, ν)`: multivariate Student t with `ν` degrees of freedom.
    FScaledForStudent { n: usize, nu: f64 },
    Custom(Arc<dyn RadialSampler>),
}

impl fmt::Debug for RadialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl RadialDistribution {
    pub fn label(&self) -> String {
        match self {
            RadialDistribution::ChiForNormal { n } => format!("sqrt-chi2({n})"),
            RadialDistribution::FScaledForStudent { n, nu } => format!("sqrt-{n}F({n},{nu})"),
            RadialDistribution::Custom(s) => format!("custom:{}", s.label()),
        }
    }

    fn sampler(&self) -> Result<RadialDraw> {
        match *self {
            RadialDistribution::ChiForNormal { n } => ChiSquared::new(n as f64)
                .map(RadialDraw::Chi)
                .map_err(|e| Error::Config(format!("chi radial: {e}"))),
            RadialDistribution::FScaledForStudent { n, nu } => FisherF::new(n as f64, nu)
                .map(|f| RadialDraw::Fisher(f, n as f64))
                .map_err(|e| Error::Config(format!("student radial: {e}"))),
            RadialDistribution::Custom(ref s) => Ok(RadialDraw::Custom(Arc::clone(s))),
        }
    }
}

enum RadialDraw {
    Chi(ChiSquared<f64>),
    Fisher(FisherF<f64>, f64),
    Custom(Arc<dyn RadialSampler>),
}

impl RadialDraw {
    fn draw(&self, rng: &mut ChaCha20Rng) -> f64 {
        match self {
            RadialDraw::Chi(d) => d.sample(rng).sqrt(),
            RadialDraw::Fisher(d, n) => (n * d.sample(rng)).sqrt(),
            RadialDraw::Custom(s) => s.sample(rng),
        }
    }
}

/// `N` draws of `μ + L·R·U`.
pub fn sample_elliptic(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    radial: &RadialDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<SampleBlock> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {n} but scale matrix is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if n_samples == 0 {
        return Err(Error::InsufficientData {
            context: "sample_elliptic",
            needed: 1,
            got: 0,
        });
    }
    check_spd(sigma)?;
    let chol = sigma.clone().cholesky().expect("checked SPD").unpack();
    let draw = radial.sampler()?;

    let mut data = vec![0.0; n * n_samples];
    data.par_chunks_mut(n * CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut u = vec![0.0; n];
        for out in chunk.chunks_mut(n) {
            let norm = loop {
                for z in u.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                let s = u.iter().map(|z| z * z).sum::<f64>().sqrt();
                if s > 0.0 {
                    break s;
                }
            };
            let r = draw.draw(&mut rng) / norm;
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &uj) in u.iter().enumerate().take(i + 1) {
                    acc += chol[(i, j)] * uj;
                }
                *o = mu[i] + r * acc;
            }
        }
    });
    Ok(SampleBlock::new(
        DMatrix::from_vec(n, n_samples, data),
        seed,
        GENERATOR_ID,
        format!("elliptic(n={n}, radial={})", radial.label()),
    ))
}

/// Gaussian sample with the given mean and covariance.
pub fn sample_gaussian(mu: &DVector<f64>, sigma: &DMatrix<f64>, n_samples: usize, seed: u64) -> Result<SampleBlock> {
    sample_elliptic(mu, sigma, &RadialDistribution::ChiForNormal { n: mu.len() }, n_samples, seed)
}

/// Bounds on the implied pairwise correlation magnitudes of a random scale matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleMatrixConstraint {
    pub min_abs_corr: f64,
    pub max_abs_corr: f64,
    pub max_tries: usize,
}

impl Default for ScaleMatrixConstraint {
    fn default() -> Self {
        Self {
            min_abs_corr: 0.2,
            max_abs_corr: 0.8,
            max_tries: 100_000,
        }
    }
}

impl ScaleMatrixConstraint {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_abs_corr && self.min_abs_corr < self.max_abs_corr && self.max_abs_corr <= 1.0) {
            return Err(Error::Config(format!(
                "correlation bounds need 0 <= min < max <= 1, got [{}, {}]",
                self.min_abs_corr, self.max_abs_corr
            )));
        }
        Ok(())
    }

    pub fn admits(&self, sigma: &DMatrix<f64>) -> bool {
        let n = sigma.nrows();
        (0..n).all(|i| {
            ((i + 1)..n).all(|j| {
                let c = (sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt()).abs();
                c >= self.min_abs_corr && c <= self.max_abs_corr
            })
        })
    }
}

/// Random SPD scale matrix `G Gᵀ` (`G` an `n × n` standard Gaussian matrix),
/// redrawn until every implied correlation magnitude lies within `constraint`.
///
/// `G Gᵀ` is Wishart with identity scale, whose law is invariant under
/// orthogonal conjugation.
pub fn random_scale_matrix(n: usize, constraint: &ScaleMatrixConstraint, seed: u64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("scale matrix dimension must be >= 2, got {n}")));
    }
    constraint.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..constraint.max_tries {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &g * g.transpose();
        if constraint.admits(&sigma) && sigma.clone().cholesky().is_some() {
            return Ok(sigma);
        }
    }
    Err(Error::RejectionBudget {
        tries: constraint.max_tries,
    })
}

/// Entrywise Euclidean norm of `a − b`.
pub fn frobenius_distance(a: &ConditionalMatrix, b: &ConditionalMatrix) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::KindMismatch(a.kind.to_string(), b.kind.to_string()));
    }
    matrix_distance(&a.matrix, &b.matrix)
}

pub(crate) fn matrix_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a - b).norm())
}

/// Search grid for the quasi-equilibrium split; defaults to 97 points
/// `0.01, 0.015, …, 0.49` refined by golden section to 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub refine_tol: f64,
}

impl Default for QGrid {
    fn default() -> Self {
        Self {
            start: 0.01,
            stop: 0.49,
            step: 0.005,
            refine_tol: 1e-4,
        }
    }
}

impl QGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.start > 0.0
            && self.stop < 0.5
            && self.start < self.stop
            && self.step > 0.0
            && self.refine_tol > 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "q grid needs 0 < start < stop < 0.5 and positive step; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    pub distance: f64,
}

/// Split minimising the tail-versus-centre Frobenius distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiEquilibriumResult {
    pub q_hat: f64,
    pub objective_value: f64,
    pub kind: MatrixKind,
    pub curve: Vec<CurvePoint>,
    /// Set when the benchmark shows no detectable correlation with any other
    /// coordinate. Every split is then an equilibrium and `q_hat` is noise.
    pub degenerate: bool,
}

impl QuasiEquilibriumResult {
    /// Number of strict local minima of the grid curve, ignoring dips
    /// shallower than `noise`.
    pub fn local_minima(&self, noise: f64) -> usize {
        let d: Vec<f64> = self.curve.iter().map(|p| p.distance).collect();
        let mut count = 0;
        for i in 0..d.len() {
            let left = d[..i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let right = d[i + 1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let is_min = (i == 0 || d[i] < d[i - 1]) && (i + 1 == d.len() || d[i] < d[i + 1]);
            if is_min && left.max(d[i]) - d[i] > noise && right.max(d[i]) - d[i] > noise {
                count += 1;
            }
        }
        count
    }
}

/// Tail-versus-centre distance function of a sample.
pub struct DistanceCurve<'a> {
    sample: &'a SampleBlock,
    order: SampleOrder,
    kind: MatrixKind,
}

impl<'a> DistanceCurve<'a> {
    pub fn new(sample: &'a SampleBlock, kind: MatrixKind) -> Self {
        Self {
            order: SampleOrder::new(sample),
            sample,
            kind,
        }
    }

    pub fn matrices(&self, q: f64) -> Result<(ConditionalMatrix, ConditionalMatrix)> {
        let tail = conditional_matrix_with_order(self.sample, &self.order, &QuantileInterval::lower(q)?, self.kind)?;
        let centre = conditional_matrix_with_order(self.sample, &self.order, &QuantileInterval::center(q)?, self.kind)?;
        Ok((tail, centre))
    }

    pub fn distance(&self, q: f64) -> Result<f64> {
        let (tail, centre) = self.matrices(q)?;
        frobenius_distance(&tail, &centre)
    }
}

/// Quasi-equilibrium split of `sample` for dependence matrices of `kind`.
pub fn quasi_equilibrium(sample: &SampleBlock, kind: MatrixKind, grid: &QGrid) -> Result<QuasiEquilibriumResult> {
    grid.validate()?;
    let curve_fn = DistanceCurve::new(sample, kind);
    let mut curve = Vec::new();
    for q in grid.points() {
        curve.push(CurvePoint {
            q,
            distance: curve_fn.distance(q)?,
        });
    }
    let best = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
        .map(|(i, _)| i)
        .expect("grid has at least one point");
    let lo = curve[best.saturating_sub(1)].q;
    let hi = curve[(best + 1).min(curve.len() - 1)].q;
    let (mut q_hat, mut objective_value) = (curve[best].q, curve[best].distance);
    if hi > lo {
        let mut failure = None;
        let (q, d) = golden_section_min(
            |q| match curve_fn.distance(q) {
                Ok(d) => d,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            lo,
            hi,
            grid.refine_tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        if d < objective_value {
            q_hat = q;
            objective_value = d;
        }
    }
    Ok(QuasiEquilibriumResult {
        q_hat,
        objective_value,
        kind,
        curve,
        degenerate: benchmark_is_independent(sample),
    })
}

/// No sample correlation between the benchmark and another coordinate
/// exceeds four standard errors of the null (`4/√N`).
fn benchmark_is_independent(sample: &SampleBlock) -> bool {
    let (_, cov) = sample.moments();
    let limit = 4.0 / (sample.len() as f64).sqrt();
    (1..sample.dim()).all(|j| (cov[(0, j)] / (cov[(0, 0)] * cov[(j, j)]).sqrt()).abs() < limit)
}

/// SplitMix64 mix of a base seed with task coordinates.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7).
pub fn sample_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Repeated quasi-equilibrium runs over random constrained scale matrices.
#[derive(Debug, Clone)]
pub struct ReplicateExperiment {
    pub n: usize,
    pub matrices: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub kinds: Vec<MatrixKind>,
    pub constraint: ScaleMatrixConstraint,
    pub grid: QGrid,
}

/// One matrix of a [`ReplicateExperiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub matrix_seed: u64,
    pub sample_seed: u64,
    pub results: Vec<QuasiEquilibriumResult>,
}

/// 0.1, 0.5 and 0.9 quantiles of the `q̂` values of one matrix kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub kind: MatrixKind,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub q_hats: Vec<f64>,
}

impl QuantileSummary {
    pub fn from_values(kind: MatrixKind, q_hats: Vec<f64>) -> Self {
        Self {
            kind,
            q10: sample_quantile(&q_hats, 0.1),
            q50: sample_quantile(&q_hats, 0.5),
            q90: sample_quantile(&q_hats, 0.9),
            q_hats,
        }
    }
}

impl ReplicateExperiment {
    /// Runs every matrix with `radial(n)`; replicates execute in parallel with
    /// seeds derived from `(seed, tag, index)`, so results do not depend on
    /// scheduling.
    pub fn run(&self, radial: &RadialDistribution, tag: u64) -> Result<Vec<Replicate>> {
        if self.matrices == 0 {
            return Err(Error::Config("need at least one matrix".into()));
        }
        self.grid.validate()?;
        (0..self.matrices)
            .into_par_iter()
            .map(|index| {
                let task = derive_seed(self.seed, tag, index as u64);
                let matrix_seed = derive_seed(task, 1, 0);
                let sample_seed = derive_seed(task, 2, 0);
                let sigma = random_scale_matrix(self.n, &self.constraint, matrix_seed)?;
                let sample = sample_elliptic(&DVector::zeros(self.n), &sigma, radial, self.sample_size, sample_seed)?;
                let results = self
                    .kinds
                    .iter()
                    .map(|&kind| quasi_equilibrium(&sample, kind, &self.grid))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Replicate {
                    index,
                    matrix_seed,
                    sample_seed,
                    results,
                })
            })
            .collect()
    }

    pub fn summarize(&self, replicates: &[Replicate]) -> Vec<QuantileSummary> {
        self.kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| QuantileSummary::from_values(kind, replicates.iter().map(|r| r.results[k].q_hat).collect()))
            .collect()
    }
}

/// Location of `q̂` across random scale matrices as a function of the Student degrees of freedom.
#[derive(Debug, Clone)]
pub struct StudentSweep {
    pub n: usize,
    pub nus: Vec<f64>,
    pub matrices_per_nu: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub constraint: ScaleMatrixConstraint,
    pub grid: QGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nu: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub q_hats: Vec<f64>,
}

impl StudentSweep {
    pub fn run(&self) -> Result<Vec<SweepRow>> {
        if self.nus.iter().any(|&nu| !(nu > 0.0)) {
            return Err(Error::Config("degrees of freedom must be positive".into()));
        }
        self.nus
            .iter()
            .map(|&nu| {
                let experiment = ReplicateExperiment {
                    n: self.n,
                    matrices: self.matrices_per_nu,
                    sample_size: self.sample_size,
                    seed: self.seed,
                    kinds: vec![MatrixKind::Correlation],
                    constraint: self.constraint,
                    grid: self.grid,
                };
                let radial = RadialDistribution::FScaledForStudent { n: self.n, nu };
                let reps = experiment.run(&radial, nu.to_bits())?;
                let q_hats: Vec<f64> = reps.iter().map(|r| r.results[0].q_hat).collect();
                Ok(SweepRow {
                    nu,
                    q10: sample_quantile(&q_hats, 0.1),
                    q50: sample_quantile(&q_hats, 0.5),
                    q90: sample_quantile(&q_hats, 0.9),
                    q_hats,
                })
            })
            .collect()
    }
}
