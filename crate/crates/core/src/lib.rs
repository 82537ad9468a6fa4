//! Equilibrium partitions of populations ranked by a benchmark coordinate.
//!
//! For a Gaussian vector split by quantiles of its first coordinate, the
//! lower, middle and upper groups share one conditional covariance matrix
//! exactly when the outer groups each hold `q ≈ 0.198089616` of the mass.
//! This crate computes that split and its many-group analogues in closed
//! form, the concordance (Spearman ρ, Kendall τ) analogues through the
//! conditional Gaussian copula, and Monte Carlo quasi-equilibria for
//! elliptic laws.

pub mod concordance;
pub mod dataio;
pub mod elliptic_mc;
pub mod empirical;
pub mod equilibrium;
pub mod error;
pub mod gaussian;
mod matrix_serde;
pub mod quadrature;
pub mod roots;
pub mod sample;
pub mod truncated;

pub use error::{Error, Result};
pub use sample::SampleBlock;
pub use truncated::{ConditionalMatrix, GaussianModel, MatrixKind, QuantileInterval, TruncatedMoments};
