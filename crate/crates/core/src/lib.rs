//! Second-order functional data analysis with optimal transport.
//!
//! The crate covers the numerical side of a two-step analysis of grouped
//! curves: a penalized-spline additive mean model whose residual curves are
//! then compared through their covariance operators under the
//! Bures–Wasserstein (Wasserstein–Procrustes) geometry.
//!
//! - [`spd`]: positive semi-definite operators, roots, distance, transport maps.
//! - [`curves`]: curves on a common grid, resampling, empirical moments.
//! - [`meanmodel`]: additive mean model with factor smooths and speaker effects.
//! - [`otinfer`]: Fréchet means and the transport-map permutation test.
//! - [`tpca`]: tangent-space principal component analysis.
//! - [`simulate`]: Gaussian process samplers and replication harnesses.

pub mod curves;
pub mod error;
pub mod meanmodel;
pub mod otinfer;
pub mod simulate;
pub mod spd;
pub mod tpca;

mod rng;

pub use error::{Error, Result};
pub use rng::derive_seed;
