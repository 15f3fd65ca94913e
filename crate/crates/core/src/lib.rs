//! Numerical laboratory for one-dimensional (and level-2 multi-dimensional)
//! rough-path calculus.
//!
//! The crate is organised around the Bell-polynomial representation of
//! one-dimensional rough paths: a path plus a stack of renormalisation terms
//! `G^2..G^k` generates every level through complete Bell polynomials, and in
//! particular the Hermite lift of a Gaussian process takes `G^2 = -Var/2`.
//! On top of that sit rough integration against controlled integrands, the
//! rough Itô formula, level-2 rough differential equations, Monte-Carlo
//! unbiasedness testing, and the power-mean arbitrage in geometric rough
//! markets.
//!
//! Module map:
//! - [`bell`]: complete Bell polynomials and Hermite specialisations;
//! - [`gauss`]: grids, sampled paths, Gaussian simulators and variance curves;
//! - [`roughpath`]: rough-path construction, classification and validation;
//! - [`controlled`]: polynomial / Markovian / signature integrands;
//! - [`integrate`]: rough and Young integrals, the Itô-formula residual;
//! - [`rde`]: Davie-scheme RDEs and controlled-path/rough-path consistency;
//! - [`stats`]: Monte-Carlo harness, unbiasedness and balancing reports;
//! - [`market`]: rough market models, gain processes and the arbitrage demo.

pub mod bell;
pub mod controlled;
pub mod csv;
pub mod error;
pub mod gauss;
pub mod integrate;
pub mod market;
pub mod rde;
pub mod roughpath;
pub mod stats;

pub use error::{Error, Result};
pub use gauss::{Grid, SampledPath, VarianceFunction, VarianceKind};
pub use roughpath::{LevelAccessor, RenormTerms, RoughPath1D, RoughPathL2, Scheme};
pub use stats::MCEstimate;

/// Sums a slice by recursive pairwise reduction.
///
/// Used everywhere a Monte-Carlo or Riemann sum must be reproducible
/// independent of worker count: the reduction tree depends only on the
/// slice length, never on scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
