//! Approximate maximum likelihood (AML) estimation for stochastic simulation
//! models.
//!
//! The estimator performs a simultaneous-perturbation stochastic gradient
//! ascent on a summary-statistic likelihood that is approximated by
//! multivariate kernel density estimation over simulated datasets. The crate
//! provides:
//!
//! - [`kde`]: kernel density machinery (modified Gaussian kernel, diagonal
//!   Silverman bandwidths, moving-average smoothing, nearest-neighbor
//!   fallback for degenerate densities),
//! - [`spsa`]: gain sequences, Rademacher perturbations, two-sided gradient
//!   estimates, box projection and step clamping,
//! - [`tuning`]: gain calibration and the periodic trend / range /
//!   convergence diagnostics,
//! - [`models`]: the data-generating-process interface plus built-in
//!   multivariate normal and M/G/1 queue models,
//! - [`estimator`]: starting-point screening, the main iteration loop, MAP
//!   mode and multi-start selection,
//! - [`bootstrap`]: parametric bootstrap replicates, bias correction and
//!   simple (basic) confidence intervals.
//!
//! All numeric code is generic over the scalar type through [`Scalar`];
//! `f64` is the intended default and the type aliases at the crate root
//! refer to it. Parameter vectors are plain `Vec<F>` / `&[F]`.
//!
//! Randomness is fully deterministic: every operation that simulates takes a
//! [`rng::StreamKey`], and independent parallel work units receive
//! hierarchically split child streams, so results are bitwise identical for
//! a given master seed regardless of thread count.

pub mod bootstrap;
pub mod error;
pub mod estimator;
pub mod kde;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod spsa;
pub mod tuning;

pub use error::{AmlError, Result};
pub use rng::StreamKey;
pub use scalar::Scalar;

/// `f64` aliases for the generic core types.
pub type SummaryVector = kde::SummaryVector<f64>;
pub type BandwidthMatrix = kde::BandwidthMatrix<f64>;
pub type KdeConfig = kde::KdeConfig<f64>;
pub type LikelihoodEstimate = kde::LikelihoodEstimate<f64>;
pub type ParameterSpace = spsa::ParameterSpace<f64>;
pub type GainSchedule = spsa::GainSchedule<f64>;
pub type Perturbation = spsa::Perturbation<f64>;
pub type GradientEstimate = spsa::GradientEstimate<f64>;
pub type TuningConfig = tuning::TuningConfig<f64>;
pub type RunConfig = estimator::RunConfig<f64>;
pub type RunTrajectory = estimator::RunTrajectory<f64>;
pub type MultiStartResult = estimator::MultiStartResult<f64>;
pub type BootstrapResult = bootstrap::BootstrapResult<f64>;
pub type NormalModel = models::NormalModel<f64>;
pub type Mg1Model = models::Mg1Model<f64>;
