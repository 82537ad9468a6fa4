//! Equilibrium splits: quantile cuts at which every group has the same
//! conditional covariance.
//!
//! Because truncation only moves the covariance along `β βᵀ`, groups are in
//! balance exactly when their standardised benchmark variances agree, whatever
//! `μ` and `Σ` are. For three groups this reduces to the scalar equation
//! `−xΦ(x) = φ(x)(1 − 2Φ(x))`; for `k` groups to `(k − 1)/2` equations in the
//! symmetric cuts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic_mc::{derive_seed, matrix_distance, sample_gaussian};
use crate::empirical::{conditional_matrix_with_order, SampleOrder};
use crate::error::{Error, Result};
use crate::gaussian::{std_cdf, std_pdf};
use crate::roots::{bisect, brent};
use crate::sample::SampleBlock;
use crate::truncated::{
    conditional_covariance, interval_moments, truncated_moments_std, ConditionalMatrix, GaussianModel, MatrixKind,
    QuantileInterval, TruncatedMoments,
};

/// Minimum rows per group for the normality statistic.
pub const NORMALITY_MIN_ROWS: usize = 100;

/// One quantile band and its standardised benchmark moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub interval: QuantileInterval,
    pub moments: TruncatedMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// Interior cut points, ascending.
    pub splits: Vec<f64>,
    /// Standardised outermost lower cut `Φ⁻¹(splits[0])`.
    pub root_x: f64,
    /// Largest pairwise discrepancy between group variances, or between
    /// conditional covariance matrices when a model is attached.
    pub residual: f64,
    pub groups: Vec<Group>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditional_matrices: Vec<ConditionalMatrix>,
}

impl EquilibriumReport {
    pub fn masses(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.interval.mass()).collect()
    }
}

/// `f(x) = −xΦ(x) − φ(x)(1 − 2Φ(x))`, zero where the lower tail `(−∞, x]` and
/// the central band `[x, −x]` have equal variance.
pub fn balance_function(x: f64) -> f64 {
    let cdf = std_cdf(x);
    -x * cdf - std_pdf(x) * (1.0 - 2.0 * cdf)
}

/// The three-group split `q ≈ 0.198089616`.
pub fn solve_equilibrium_3() -> Result<EquilibriumReport> {
    let root = brent(balance_function, -3.0, -0.1, 1e-16, 1e-16, 200)?;
    if root.fx.abs() > 1e-14 {
        return Err(Error::Convergence {
            what: "three-group balance equation",
            best: root.x,
            residual: root.fx.abs(),
        });
    }
    symmetric_report(&[root.x])
}

/// Symmetric `k`-group split (`k` odd, at least 3).
pub fn solve_equilibrium_k(k: usize) -> Result<EquilibriumReport> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::Domain {
            what: "solve_equilibrium_k",
            value: k as f64,
            expected: "odd k >= 3",
        });
    }
    if k == 3 {
        return solve_equilibrium_3();
    }
    let cuts = match newton_cuts(k) {
        Some(x) => x,
        None => bisection_cuts(k)?,
    };
    let report = symmetric_report(&cuts)?;
    if report.residual > 1e-10 {
        return Err(Error::Convergence {
            what: "k-group balance system",
            best: report.root_x,
            residual: report.residual,
        });
    }
    Ok(report)
}

/// Variances of the bands `(−∞, x₁], [x₁, x₂], …, [x_m, −x_m]`.
fn band_variances(cuts: &[f64]) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut lo = f64::NEG_INFINITY;
    for &x in cuts {
        out.push(truncated_moments_std(lo, x).ok()?.variance);
        lo = x;
    }
    out.push(truncated_moments_std(lo, -lo).ok()?.variance);
    Some(out)
}

fn system(cuts: &[f64]) -> Option<DVector<f64>> {
    let ordered = cuts.windows(2).all(|w| w[0] < w[1]) && cuts.last().is_some_and(|&x| x < 0.0);
    if !ordered {
        return None;
    }
    let v = band_variances(cuts)?;
    Some(DVector::from_iterator(cuts.len(), v.windows(2).map(|w| w[0] - w[1])))
}

fn initial_cuts(k: usize) -> Vec<f64> {
    let m = (k - 1) / 2;
    let c = crate::gaussian::quantile_unchecked(1.0 / (k * (k - 1)) as f64);
    (0..m).map(|i| c * (m - i) as f64 / m as f64).collect()
}

/// Damped Newton with a forward-difference Jacobian.
fn newton_cuts(k: usize) -> Option<Vec<f64>> {
    let m = (k - 1) / 2;
    let mut x = DVector::from_vec(initial_cuts(k));
    let mut fx = system(x.as_slice())?;
    for _ in 0..100 {
        if fx.amax() <= 1e-14 {
            return Some(x.iter().copied().collect());
        }
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xh = x.clone();
            xh[j] += h;
            let fh = system(xh.as_slice()).or_else(|| {
                xh[j] -= 2.0 * h;
                system(xh.as_slice()).map(|f| -f + 2.0 * &fx)
            })?;
            jac.set_column(j, &((fh - &fx) / h));
        }
        let step = jac.lu().solve(&(-&fx))?;
        let norm = fx.norm();
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            if let Some(ft) = system(trial.as_slice()) {
                if ft.norm() < norm {
                    x = trial;
                    fx = ft;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return (fx.amax() <= 1e-12).then(|| x.iter().copied().collect());
            }
        }
    }
    (fx.amax() <= 1e-12).then(|| x.iter().copied().collect())
}

/// Nested bisection: given the outer cut, each following cut is chosen so its
/// band matches the outer tail variance; the outer cut is then bisected on the
/// mismatch of the central band.
pub(crate) fn bisection_cuts(k: usize) -> Result<Vec<f64>> {
    let m = (k - 1) / 2;
    let chain = |x1: f64| -> (f64, Vec<f64>) {
        let target = truncated_moments_std(f64::NEG_INFINITY, x1).map(|t| t.variance).unwrap_or(0.0);
        let mut cuts = vec![x1];
        for _ in 1..m {
            let lo = *cuts.last().unwrap();
            let band = |x: f64| truncated_moments_std(lo, x).map(|t| t.variance).unwrap_or(0.0) - target;
            if band(-lo.abs() * 1e-12) < 0.0 {
                // the band cannot reach the tail variance before zero: outer cut too high
                return (-1.0, cuts);
            }
            cuts.push(bisect(band, lo, 0.0, 1e-15, 200));
        }
        let last = *cuts.last().unwrap();
        let centre = truncated_moments_std(last, -last).map(|t| t.variance).unwrap_or(0.0);
        (centre - target, cuts)
    };
    let x1 = bisect(|x| chain(x).0, -8.0, -1e-3, 1e-15, 200);
    let (residual, cuts) = chain(x1);
    if cuts.len() != m || residual.abs() > 1e-10 {
        return Err(Error::Convergence {
            what: "nested bisection for k-group split",
            best: x1,
            residual: residual.abs(),
        });
    }
    Ok(cuts)
}

/// Report for the symmetric cuts `x₁ < … < x_m < 0` and their mirror images.
fn symmetric_report(cuts: &[f64]) -> Result<EquilibriumReport> {
    let lower: Vec<f64> = cuts.iter().map(|&x| std_cdf(x)).collect();
    let mut splits = lower.clone();
    splits.extend(lower.iter().rev().map(|q| 1.0 - q));

    let mut edges_x = vec![f64::NEG_INFINITY];
    edges_x.extend_from_slice(cuts);
    edges_x.extend(cuts.iter().rev().map(|x| -x));
    edges_x.push(f64::INFINITY);
    let mut edges_q = vec![0.0];
    edges_q.extend_from_slice(&splits);
    edges_q.push(1.0);

    let mut groups = Vec::with_capacity(edges_x.len() - 1);
    for i in 0..edges_x.len() - 1 {
        groups.push(Group {
            interval: QuantileInterval::new(edges_q[i], edges_q[i + 1])?,
            moments: truncated_moments_std(edges_x[i], edges_x[i + 1])?,
        });
    }
    let v: Vec<f64> = groups.iter().map(|g| g.moments.variance).collect();
    let residual = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EquilibriumReport {
        splits,
        root_x: cuts[0],
        residual,
        groups,
        conditional_matrices: Vec::new(),
    })
}

/// Conditional covariances of every group cut by `splits`; the residual is the
/// largest pairwise Frobenius distance between them.
pub fn balance_report(model: &GaussianModel, splits: &[f64]) -> Result<EquilibriumReport> {
    let ascending = splits.windows(2).all(|w| w[0] < w[1]);
    if splits.is_empty() || !ascending || splits[0] <= 0.0 || splits[splits.len() - 1] >= 1.0 {
        return Err(Error::Config(format!(
            "splits must be strictly ascending inside (0, 1), got {splits:?}"
        )));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(splits);
    edges.push(1.0);
    let intervals = edges
        .windows(2)
        .map(|w| QuantileInterval::new(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    let results = intervals
        .par_iter()
        .map(|iv| Ok((interval_moments(iv)?, conditional_covariance(model, iv)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut residual: f64 = 0.0;
    for i in 0..results.len() {
        for j in (i + 1)..results.len() {
            residual = residual.max(matrix_distance(&results[i].1.matrix, &results[j].1.matrix)?);
        }
    }
    let (groups, conditional_matrices) = intervals
        .iter()
        .zip(results)
        .map(|(&interval, (moments, cov))| (Group { interval, moments }, cov))
        .unzip();
    Ok(EquilibriumReport {
        root_x: crate::gaussian::quantile_unchecked(splits[0]),
        splits: splits.to_vec(),
        residual,
        groups,
        conditional_matrices,
    })
}

/// `‖Σ̂_[0,q] − Σ̂_[q,1−q]‖_F` from order-statistic groups of `sample`.
pub fn normality_distance(sample: &SampleBlock, q: f64) -> Result<f64> {
    let order = SampleOrder::new(sample);
    normality_distance_with_order(sample, &order, q)
}

fn normality_distance_with_order(sample: &SampleBlock, order: &SampleOrder, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Domain {
            what: "normality_distance",
            value: q,
            expected: "0 < q < 0.5",
        });
    }
    let tail = QuantileInterval::lower(q)?;
    let centre = QuantileInterval::center(q)?;
    let smallest = order.group(&tail).len().min(order.group(&centre).len());
    if smallest < NORMALITY_MIN_ROWS {
        return Err(Error::InsufficientData {
            context: "normality distance group",
            needed: NORMALITY_MIN_ROWS,
            got: smallest,
        });
    }
    let a = conditional_matrix_with_order(sample, order, &tail, MatrixKind::Covariance)?;
    let b = conditional_matrix_with_order(sample, order, &centre, MatrixKind::Covariance)?;
    matrix_distance(&a.matrix, &b.matrix)
}

/// Normality statistic with a simulated null distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    pub q: f64,
    pub statistic: f64,
    /// Statistics of Gaussian replicates at the fitted mean and covariance.
    pub reference: Vec<f64>,
    /// Percentage of reference values not exceeding `statistic`.
    pub percentile: f64,
    pub seed: u64,
}

/// Compares the statistic of `sample` with `replicates` Gaussian samples of
/// the same size drawn at its fitted mean and covariance.
pub fn normality_test(sample: &SampleBlock, q: f64, replicates: usize, seed: u64) -> Result<NormalityTest> {
    let statistic = normality_distance(sample, q)?;
    let (mean, cov) = sample.moments();
    let mu = DVector::from_vec(mean);
    let reference = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let sim = sample_gaussian(&mu, &cov, sample.len(), derive_seed(seed, i as u64, 0))?;
            normality_distance(&sim, q)
        })
        .collect::<Result<Vec<_>>>()?;
    let below = reference.iter().filter(|&&s| s <= statistic).count();
    let percentile = if replicates == 0 {
        f64::NAN
    } else {
        100.0 * below as f64 / replicates as f64
    };
    Ok(NormalityTest {
        q,
        statistic,
        reference,
        percentile,
        seed,
    })
}
