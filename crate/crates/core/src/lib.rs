//! Propensity score matching without tuning parameters.
//!
//! The propensity score is estimated by monotone (isotonic) maximum
//! likelihood, which groups units into blocks of identical fitted scores.
//! Treated and control units sharing a block are exact propensity matches,
//! so the matching estimator of the effect on the treated reduces to an
//! inverse probability weighting estimator with no bandwidth, caliper or
//! match count to choose. Multivariate covariates enter through a
//! single index `x'β` with an unknown monotone link.
//!
//! Module map:
//! - [`data`]: validated observations, sort permutations, report types.
//! - [`isotonic`]: pool-adjacent-violators fit of the step propensity.
//! - [`index`]: logistic MLE and simple score estimation of the index.
//! - [`estimators`]: μ₁ and ATT estimators, including the PSM-M baseline.
//! - [`inference`]: percentile bootstrap.
//! - [`simulation`]: data-generating processes and Monte Carlo studies.

pub mod data;
pub mod error;
pub mod estimators;
pub mod index;
pub mod inference;
pub mod isotonic;
pub mod link;
pub mod pipeline;
pub mod rng;
pub mod simulation;

pub use data::{EffectEstimate, Method, ObservationSet, RawRecord, SortPermutation, Target};
pub use error::{Error, Result};
pub use index::{IndexFit, IndexMethod, LogisticFit, SphericalPoint};
pub use isotonic::StepPropensity;
pub use link::Link;
