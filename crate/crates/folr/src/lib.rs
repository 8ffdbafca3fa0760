//! Ordinal regression with functional covariates.
//!
//! The pipeline: raw sampled curves are smoothed into coefficients on a
//! function basis ([`basis`]), the L2 inner product between curve and
//! coefficient bases is collapsed into a Gram matrix so the functional model
//! becomes an ordinary cumulative-logit model ([`fit`]), which is estimated by
//! (optionally L1-penalized) maximum likelihood and queried through
//! loss-optimal decision rules ([`ordinal`]). [`eval`] adds synthetic data
//! generation and cross-validated error metrics, [`persist`] the on-disk
//! formats.

pub mod basis;
pub mod eval;
pub mod fit;
pub mod linalg;
pub mod ordinal;
pub mod persist;

pub(crate) mod quad;
