//! Concordance of a Gaussian pair after conditioning the first coordinate to a
//! quantile band.
//!
//! The conditional copula is written in `y`-space: with `a = Φ⁻¹(p)`,
//! `b = Φ⁻¹(q)` and `G(y) = (Φ₂(b, y; r) − Φ₂(a, y; r))/(q − p)` the
//! conditional law of the second coordinate, `C(s, t)` is evaluated at the
//! `y` solving `G(y) = t`. Both partial derivatives of `C` have closed forms
//! in the same coordinates, which gives Kendall's τ without numerical
//! differentiation.

use std::f64::consts::{PI, SQRT_2};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{kendall_tau_b, spearman_rho};
use crate::error::{Error, Result};
use crate::gaussian::{bivariate_cdf_unchecked, quantile_unchecked, std_cdf, std_pdf};
use crate::quadrature::gauss_legendre_unit;
use crate::roots::brent;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Tensor rule sizes tried in turn; the first pair of successive estimates
/// closer than `QUAD_TOL` ends the refinement.
const QUAD_START: usize = 64;
const QUAD_MAX: usize = 2048;
const QUAD_TOL: f64 = 1e-7;

/// Batches used for the Monte Carlo standard error.
const MC_BATCHES: usize = 20;

/// `Φ(hi) − Φ(lo)` computed on the side of zero where both terms are small.
fn cdf_diff(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_cdf(-lo) - std_cdf(-hi)
    } else {
        std_cdf(hi) - std_cdf(lo)
    }
}

/// Copula of `(X₁, X₂) | X₁ ∈ [Φ⁻¹(p), Φ⁻¹(q)]` for a standard bivariate
/// normal pair with correlation `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalCopula {
    r: f64,
    p: f64,
    q: f64,
    a: f64,
    b: f64,
    sr: f64,
}

impl ConditionalCopula {
    pub fn new(r: f64, p: f64, q: f64) -> Result<Self> {
        if !(r.abs() < 1.0) {
            return Err(Error::Domain {
                what: "conditional copula",
                value: r,
                expected: "|r| < 1",
            });
        }
        if !(0.0 <= p && p < q && q <= 1.0) {
            return Err(Error::InvalidInterval { q1: p, q2: q });
        }
        Ok(Self {
            r,
            p,
            q,
            a: quantile_unchecked(p),
            b: quantile_unchecked(q),
            sr: (1.0 - r * r).sqrt(),
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    fn mass(&self) -> f64 {
        self.q - self.p
    }

    /// Conditional distribution function of the second coordinate.
    pub fn margin_cdf(&self, y: f64) -> f64 {
        (bivariate_cdf_unchecked(self.b, y, self.r) - bivariate_cdf_unchecked(self.a, y, self.r)) / self.mass()
    }

    /// `y` with `margin_cdf(y) = t`, for `t ∈ (0, 1)`.
    pub fn invert_margin(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Inversion {
                target: t,
                reason: "target must lie strictly inside (0, 1)",
            });
        }
        let f = |y: f64| self.margin_cdf(y) - t;
        let (mut lo, mut hi) = (-1.0, 1.0);
        while f(lo) > 0.0 {
            lo *= 2.0;
            if lo < -64.0 {
                return Err(Error::Inversion {
                    target: t,
                    reason: "no lower bracket",
                });
            }
        }
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 64.0 {
                return Err(Error::Inversion {
                    target: t,
                    reason: "no upper bracket",
                });
            }
        }
        brent(f, lo, hi, 1e-14, 0.0, 200)
            .map(|root| root.x)
            .map_err(|_| Error::Inversion {
                target: t,
                reason: "bracketed iteration stalled",
            })
    }

    /// Benchmark coordinate of conditional rank `s`.
    fn benchmark_at(&self, s: f64) -> f64 {
        if s >= 1.0 {
            self.b
        } else {
            quantile_unchecked(self.p + self.mass() * s)
        }
    }

    /// `C(s, t)` using the benchmark cut `x_s` and the inverted margin `y`.
    fn value_xy(&self, x: f64, y: f64) -> f64 {
        (bivariate_cdf_unchecked(x, y, self.r) - bivariate_cdf_unchecked(self.a, y, self.r)) / self.mass()
    }

    /// `∂C/∂s` at `(x_s, y)`.
    fn ds_xy(&self, x: f64, y: f64) -> f64 {
        let rx = if self.r == 0.0 { 0.0 } else { self.r * x };
        std_cdf((y - rx) / self.sr)
    }

    /// `∂C/∂t` at `(x_s, y)`.
    fn dt_xy(&self, x: f64, y: f64) -> f64 {
        let z = |u: f64| (u - self.r * y) / self.sr;
        let den = cdf_diff(z(self.a), z(self.b));
        if den <= 0.0 {
            return 0.0;
        }
        (cdf_diff(z(self.a), z(x)) / den).clamp(0.0, 1.0)
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        check_unit(s)?;
        check_unit(t)?;
        if s == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        if t == 1.0 {
            return Ok(s);
        }
        if s == 1.0 {
            return Ok(t);
        }
        let y = self.invert_margin(t)?;
        Ok(self.value_xy(self.benchmark_at(s), y).clamp(0.0, s.min(t)))
    }

    /// `(∂C/∂s, ∂C/∂t)` at an interior point.
    pub fn partials(&self, s: f64, t: f64) -> Result<(f64, f64)> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain {
                what: "copula partials",
                value: s,
                expected: "0 < s < 1",
            });
        }
        let y = self.invert_margin(t)?;
        let x = self.benchmark_at(s);
        Ok((self.ds_xy(x, y), self.dt_xy(x, y)))
    }
}

fn check_unit(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain {
            what: "copula argument",
            value: u,
            expected: "0 <= u <= 1",
        });
    }
    Ok(())
}

/// How a concordance value is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Tensor Gauss–Legendre over the unit square.
    Quadrature,
    /// Rank statistics of `draws` exact conditional draws.
    MonteCarlo { draws: usize, seed: u64 },
}

/// A concordance value with its error indicator: the last refinement change
/// for quadrature, the batch-means standard error for Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Which concordance measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kappa {
    Rho,
    Tau,
}

impl std::str::FromStr for Kappa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rho" | "spearman" => Ok(Kappa::Rho),
            "tau" | "kendall" => Ok(Kappa::Tau),
            other => Err(Error::Config(format!("unknown concordance measure `{other}`"))),
        }
    }
}

/// Spearman's ρ of the conditional copula.
pub fn conditional_spearman(r: f64, p: f64, q: f64, method: Method) -> Result<Estimate> {
    conditional_concordance(Kappa::Rho, r, p, q, method)
}

/// Kendall's τ of the conditional copula.
pub fn conditional_kendall(r: f64, p: f64, q: f64, method: Method) -> Result<Estimate> {
    conditional_concordance(Kappa::Tau, r, p, q, method)
}

pub fn conditional_concordance(kappa: Kappa, r: f64, p: f64, q: f64, method: Method) -> Result<Estimate> {
    let cop = ConditionalCopula::new(r, p, q)?;
    if r == 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    match method {
        Method::Quadrature => quadrature(&cop, kappa),
        Method::MonteCarlo { draws, seed } => monte_carlo(&cop, kappa, draws, seed),
    }
}

fn quadrature(cop: &ConditionalCopula, kappa: Kappa) -> Result<Estimate> {
    let mut n = QUAD_START;
    let mut prev = quadrature_rule(cop, kappa, n)?;
    while n < QUAD_MAX {
        n *= 2;
        let next = quadrature_rule(cop, kappa, n)?;
        let change = (next - prev).abs();
        if change < QUAD_TOL {
            return Ok(Estimate { value: next, error: change });
        }
        prev = next;
    }
    Err(Error::Convergence {
        what: "concordance quadrature",
        best: prev,
        residual: f64::NAN,
    })
}

fn quadrature_rule(cop: &ConditionalCopula, kappa: Kappa, n: usize) -> Result<f64> {
    let (nodes, weights) = gauss_legendre_unit(n);
    let xs: Vec<f64> = nodes.iter().map(|&s| cop.benchmark_at(s)).collect();
    let rows = nodes
        .par_iter()
        .map(|&t| {
            let y = cop.invert_margin(t)?;
            let mut acc = 0.0;
            for ((&s, &x), &w) in nodes.iter().zip(&xs).zip(&weights) {
                acc += w * match kappa {
                    Kappa::Rho => cop.value_xy(x, y) - s * t,
                    Kappa::Tau => cop.ds_xy(x, y) * cop.dt_xy(x, y),
                };
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = rows.iter().zip(&weights).map(|(r, w)| r * w).sum();
    Ok(match kappa {
        Kappa::Rho => 12.0 * total,
        Kappa::Tau => 1.0 - 4.0 * total,
    })
}

/// Exact conditional draws: `X₁ = Φ⁻¹(p + (q − p)U)`, `X₂ = rX₁ + √(1 − r²) Z`.
pub fn conditional_pairs(cop: &ConditionalCopula, draws: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(draws);
    let mut y = Vec::with_capacity(draws);
    for _ in 0..draws {
        let u: f64 = rng.sample(Open01);
        let z: f64 = rng.sample(StandardNormal);
        let x1 = quantile_unchecked(cop.p + cop.mass() * u);
        x.push(x1);
        y.push(cop.r * x1 + cop.sr * z);
    }
    (x, y)
}

fn monte_carlo(cop: &ConditionalCopula, kappa: Kappa, draws: usize, seed: u64) -> Result<Estimate> {
    if draws < 10 * MC_BATCHES {
        return Err(Error::InsufficientData {
            context: "Monte Carlo concordance",
            needed: 10 * MC_BATCHES,
            got: draws,
        });
    }
    let (x, y) = conditional_pairs(cop, draws, seed);
    let stat = |a: &[f64], b: &[f64]| match kappa {
        Kappa::Rho => spearman_rho(a, b),
        Kappa::Tau => kendall_tau_b(a, b),
    };
    let value = stat(&x, &y);
    let size = draws / MC_BATCHES;
    let batch: Vec<f64> = (0..MC_BATCHES)
        .into_par_iter()
        .map(|i| stat(&x[i * size..(i + 1) * size], &y[i * size..(i + 1) * size]))
        .collect();
    let mean = batch.iter().sum::<f64>() / MC_BATCHES as f64;
    let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (MC_BATCHES - 1) as f64;
    // a batch of size N/B has B times the variance of the full estimate
    let error = (var / MC_BATCHES as f64).sqrt();
    Ok(Estimate { value, error })
}

/// First-order coefficient of `ρ_[p,q](r)` in `r`.
pub fn taylor_slope_rho(p: f64, q: f64) -> f64 {
    let x1 = quantile_unchecked(p);
    let x2 = quantile_unchecked(q);
    let m = q - p;
    3.0 / (m * m * PI) * (std_cdf(SQRT_2 * x2) - std_cdf(SQRT_2 * x1) - m * SQRT_PI * (std_pdf(x1) + std_pdf(x2)))
}

/// Tail-minus-centre concordance differences at split `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceCurvePoint {
    pub q: f64,
    pub r: f64,
    pub delta_rho: f64,
    pub delta_tau: f64,
}

/// `Δ_κ(q, r) = κ_[0,q](r) − κ_[q,1−q](r)`.
pub fn delta(kappa: Kappa, q: f64, r: f64, method: Method) -> Result<f64> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Domain {
            what: "delta curve",
            value: q,
            expected: "0 < q < 0.5",
        });
    }
    let tail = conditional_concordance(kappa, r, 0.0, q, method)?;
    let centre = conditional_concordance(kappa, r, q, 1.0 - q, method)?;
    Ok(tail.value - centre.value)
}

pub fn delta_curves(q: f64, r: f64, method: Method) -> Result<ConcordanceCurvePoint> {
    Ok(ConcordanceCurvePoint {
        q,
        r,
        delta_rho: delta(Kappa::Rho, q, r, method)?,
        delta_tau: delta(Kappa::Tau, q, r, method)?,
    })
}

/// Left-hand side of the equation whose root is `q*`.
pub fn qstar_function(q: f64) -> f64 {
    let x = quantile_unchecked(q);
    (1.0 - 4.0 * q + 6.0 * q * q) * std_cdf(SQRT_2 * x) - q * (1.0 - 6.0 * q + 8.0 * q * q) * SQRT_PI * std_pdf(x) - q * q
}

/// Split at which tail and centre Spearman slopes coincide, `q* ≈ 0.2132413`.
pub fn solve_qstar() -> Result<f64> {
    brent(qstar_function, 0.1, 0.4, 1e-15, 0.0, 200).map(|root| root.x)
}

/// Zero of `Δ_κ(·, r)` on `(0, 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRoot {
    pub r: f64,
    pub kappa: Kappa,
    pub q: f64,
    /// `Δ_κ(q, r)` at the returned split.
    pub delta: f64,
    /// Further sign changes found by the grid scan, if any.
    pub other_roots: Vec<f64>,
}

/// Scan grid for sign changes of `Δ_κ(·, r)`.
fn scan_grid() -> Vec<f64> {
    (0..=16).map(|i| 0.05 + 0.025 * i as f64).collect()
}

/// `A_κ(r)`, with `A_κ(0)` defined as `q*`.
pub fn equilibrium_curve_a(r: f64, kappa: Kappa) -> Result<CurveRoot> {
    if !(r.abs() < 1.0) {
        return Err(Error::Domain {
            what: "equilibrium curve",
            value: r,
            expected: "|r| < 1",
        });
    }
    if r == 0.0 {
        return Ok(CurveRoot {
            r,
            kappa,
            q: solve_qstar()?,
            delta: 0.0,
            other_roots: Vec::new(),
        });
    }
    let f = |q: f64| delta(kappa, q, r, Method::Quadrature);
    let grid = scan_grid();
    let values = grid.par_iter().map(|&q| f(q)).collect::<Result<Vec<f64>>>()?;
    let mut roots = Vec::new();
    for i in 0..grid.len() - 1 {
        if values[i] == 0.0 {
            roots.push(grid[i]);
        } else if values[i].signum() != values[i + 1].signum() {
            let mut failure = None;
            let root = brent(
                |q| match f(q) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                },
                grid[i],
                grid[i + 1],
                1e-10,
                1e-9,
                100,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            roots.push(root?.x);
        }
    }
    if roots.is_empty() {
        let best = values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        return Err(Error::Convergence {
            what: "equilibrium curve (no sign change on the scan grid)",
            best: f64::NAN,
            residual: best,
        });
    }
    let q = roots.remove(0);
    Ok(CurveRoot {
        r,
        kappa,
        q,
        delta: f(q)?,
        other_roots: roots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independence_gives_product() {
        let c = ConditionalCopula::new(0.0, 0.1, 0.4).unwrap();
        for &(s, t) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.05)] {
            assert!((c.eval(s, t).unwrap() - s * t).abs() < 1e-12);
        }
    }

    #[test]
    fn unconditioned_matches_gaussian_copula() {
        let c = ConditionalCopula::new(0.6, 0.0, 1.0).unwrap();
        for &(s, t) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.05)] {
            let direct = bivariate_cdf_unchecked(quantile_unchecked(s), quantile_unchecked(t), 0.6);
            assert!((c.eval(s, t).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_hits_target() {
        let c = ConditionalCopula::new(0.8, 0.2, 0.8).unwrap();
        for t in [1e-6, 0.01, 0.3, 0.5, 0.99, 1.0 - 1e-6] {
            let y = c.invert_margin(t).unwrap();
            assert!((c.margin_cdf(y) - t).abs() < 1e-10);
        }
        assert!(c.invert_margin(0.0).is_err());
    }

    #[test]
    fn flip_identity() {
        for &(p, q) in &[(0.0, 0.2), (0.2, 0.8)] {
            let pos = ConditionalCopula::new(0.5, p, q).unwrap();
            let neg = ConditionalCopula::new(-0.5, p, q).unwrap();
            for i in 1..10 {
                for j in 1..10 {
                    let (s, t) = (i as f64 / 10.0, j as f64 / 10.0);
                    let lhs = neg.eval(s, t).unwrap();
                    let rhs = s - pos.eval(s, 1.0 - t).unwrap();
                    assert!((lhs - rhs).abs() < 1e-10, "{s} {t}");
                }
            }
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let c = ConditionalCopula::new(0.7, 0.0, 0.3).unwrap();
        let h = 1e-5;
        for &(s, t) in &[(0.3, 0.4), (0.8, 0.2), (0.5, 0.9)] {
            let (ds, dt) = c.partials(s, t).unwrap();
            let fs = (c.eval(s + h, t).unwrap() - c.eval(s - h, t).unwrap()) / (2.0 * h);
            let ft = (c.eval(s, t + h).unwrap() - c.eval(s, t - h).unwrap()) / (2.0 * h);
            assert!((ds - fs).abs() < 1e-6, "{ds} {fs}");
            assert!((dt - ft).abs() < 1e-6, "{dt} {ft}");
        }
    }

    #[test]
    fn unconditioned_concordance_closed_forms() {
        let r: f64 = 0.5;
        let rho = conditional_spearman(r, 0.0, 1.0, Method::Quadrature).unwrap().value;
        let tau = conditional_kendall(r, 0.0, 1.0, Method::Quadrature).unwrap().value;
        assert!((rho - 6.0 / PI * (r / 2.0).asin()).abs() < 1e-6);
        assert!((tau - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_correlation_is_zero() {
        assert_eq!(conditional_spearman(0.0, 0.1, 0.3, Method::Quadrature).unwrap().value, 0.0);
        let p = delta_curves(0.2, 0.0, Method::Quadrature).unwrap();
        assert_eq!((p.delta_rho, p.delta_tau), (0.0, 0.0));
    }

    #[test]
    fn odd_in_r() {
        for &(p, q) in &[(0.0, 0.2), (0.2, 0.8)] {
            for kappa in [Kappa::Rho, Kappa::Tau] {
                let a = conditional_concordance(kappa, 0.6, p, q, Method::Quadrature).unwrap().value;
                let b = conditional_concordance(kappa, -0.6, p, q, Method::Quadrature).unwrap().value;
                assert!((a + b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn slope_limits() {
        assert!((taylor_slope_rho(0.0, 1.0) - 3.0 / PI).abs() < 1e-15);
        let r = 0.05;
        let rho = conditional_spearman(r, 0.0, 0.3, Method::Quadrature).unwrap().value;
        assert!((rho - r * taylor_slope_rho(0.0, 0.3)).abs() < 5e-4);
    }

    #[test]
    fn qstar_root() {
        let q = solve_qstar().unwrap();
        assert!((q - 0.2132413).abs() < 5e-7);
        assert!(qstar_function(q).abs() < 1e-10);
        assert!(qstar_function(0.1).signum() != qstar_function(0.4).signum());
    }

    #[test]
    fn qstar_equates_taylor_slopes() {
        let diff = |q: f64| taylor_slope_rho(0.0, q) - taylor_slope_rho(q, 1.0 - q);
        let root = brent(diff, 0.1, 0.4, 1e-14, 0.0, 200).unwrap();
        assert!((root.x - solve_qstar().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn curve_at_zero_is_qstar() {
        let a = equilibrium_curve_a(0.0, Kappa::Rho).unwrap();
        assert_eq!(a.q, solve_qstar().unwrap());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let m = Method::MonteCarlo { draws: 20_000, seed: 3 };
        let a = conditional_kendall(0.5, 0.0, 0.3, m).unwrap();
        assert_eq!(a, conditional_kendall(0.5, 0.0, 0.3, m).unwrap());
        assert!(a.error > 0.0);
        assert!(conditional_kendall(0.5, 0.0, 0.3, Method::MonteCarlo { draws: 50, seed: 3 }).is_err());
    }
}
