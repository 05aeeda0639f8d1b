//! Estimation of population covariance eigenvalues from sample eigenvalues in
//! large dimensions, and its two main applications: nonlinear shrinkage
//! estimation of the covariance matrix and shrinkage-corrected principal
//! component analysis.
//!
//! The central object is the quantized eigenvalue sampling transform
//! ([`quest::quest_quantiles`]), which maps a candidate population spectrum to
//! the quantiles of the limiting sample spectral law it induces under the
//! Marchenko-Pastur equation. Inverting that map by nonlinear least squares
//! ([`estimator::estimate_spectrum`]) recovers the population eigenvalues, from
//! which the oracle shrinkage constants and explained-variation curves follow.
//!
//! Dimensions `p` (variables) and `n` (observations) are comparable throughout;
//! both `p < n` and `p > n` are supported.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod io;
pub mod mp;
pub mod pca;
pub mod quest;
pub mod shrinkage;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{ConcentrationContext, DiscreteSpectralDistribution, SpectrumVector};
