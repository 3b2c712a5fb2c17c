//! Parametric bootstrap around a point estimate: replicate estimation, bias
//! correction, standard errors and simple (basic) confidence intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AmlError, Result};
use crate::estimator::{multi_start_estimate, RunConfig};
use crate::models::{quantile_sorted, Prior, SimulatorModel};
use crate::rng::StreamKey;
use crate::scalar::Scalar;

/// Everything derived from one bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult<F> {
    /// B x p matrix of replicate estimates.
    pub replicates: Vec<Vec<F>>,
    pub theta_hat: Vec<F>,
    pub bias_corrected: Vec<F>,
    /// Per-coordinate standard deviation of the replicates.
    pub se: Vec<F>,
    /// Reported interval bounds (shifted where a nonnegative coordinate's
    /// raw interval crossed zero).
    pub ci_lower: Vec<F>,
    pub ci_upper: Vec<F>,
    /// Unshifted interval bounds.
    pub raw_ci_lower: Vec<F>,
    pub raw_ci_upper: Vec<F>,
    pub level: F,
    pub simultaneous: bool,
}

/// One confidence interval, possibly shifted into the nonnegative range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval<F> {
    pub lower: F,
    pub upper: F,
    pub raw_lower: F,
    pub raw_upper: F,
    pub shifted: bool,
}

/// Type-7 (linearly interpolated) empirical quantile.
pub fn quantile<F: Scalar>(values: &[F], beta: F) -> Result<F> {
    if values.is_empty() {
        return Err(AmlError::EmptyInput("quantile"));
    }
    if !(beta >= F::zero() && beta <= F::one()) {
        return Err(AmlError::Domain(format!(
            "quantile level must lie in [0, 1], got {beta}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(quantile_sorted(&sorted, beta))
}

/// Basic bootstrap interval `[2 t - q_{1-a/2}, 2 t - q_{a/2}]` at the given
/// confidence level.
///
/// When `nonnegative` is set and the raw interval dips below zero, the
/// reported interval is shifted to `[0, upper - lower]`; the raw bounds are
/// retained.
pub fn basic_ci<F: Scalar>(
    theta_hat: F,
    replicates: &[F],
    level: F,
    nonnegative: bool,
) -> Result<ConfidenceInterval<F>> {
    if !(level > F::zero() && level < F::one()) {
        return Err(AmlError::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let two = F::from_f64(2.0);
    let alpha = F::one() - level;
    let lo_q = quantile(replicates, F::one() - alpha / two)?;
    let hi_q = quantile(replicates, alpha / two)?;
    let raw_lower = two * theta_hat - lo_q;
    let raw_upper = two * theta_hat - hi_q;
    let (lower, upper, shifted) = if nonnegative && raw_lower < F::zero() {
        (F::zero(), raw_upper - raw_lower, true)
    } else {
        (raw_lower, raw_upper, false)
    };
    Ok(ConfidenceInterval {
        lower,
        upper,
        raw_lower,
        raw_upper,
        shifted,
    })
}

/// `2 theta_hat - mean(replicates)` per coordinate.
pub fn bias_corrected_estimate<F: Scalar>(
    theta_hat: &[F],
    replicates: &[Vec<F>],
) -> Result<Vec<F>> {
    if replicates.len() < 2 {
        return Err(AmlError::InsufficientData {
            context: "bias correction",
            min: 2,
            got: replicates.len(),
        });
    }
    let b = F::from_f64(replicates.len() as f64);
    let two = F::from_f64(2.0);
    (0..theta_hat.len())
        .map(|i| {
            let mean = replicates.iter().map(|r| r[i]).sum::<F>() / b;
            Ok(two * theta_hat[i] - mean)
        })
        .collect()
}

/// Per-coordinate basic intervals at the Bonferroni-adjusted level
/// `1 - (1 - level) / p`, giving simultaneous coverage `level`.
pub fn simultaneous_ci<F: Scalar>(
    theta_hat: &[F],
    replicates: &[Vec<F>],
    level: F,
    nonnegative: &[bool],
) -> Result<Vec<ConfidenceInterval<F>>> {
    let p = theta_hat.len();
    if p == 0 {
        return Err(AmlError::EmptyInput("simultaneous intervals"));
    }
    let adjusted = F::one() - (F::one() - level) / F::from_f64(p as f64);
    coordinate_cis(theta_hat, replicates, adjusted, nonnegative)
}

fn coordinate_cis<F: Scalar>(
    theta_hat: &[F],
    replicates: &[Vec<F>],
    level: F,
    nonnegative: &[bool],
) -> Result<Vec<ConfidenceInterval<F>>> {
    theta_hat
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let column: Vec<F> = replicates.iter().map(|r| r[i]).collect();
            basic_ci(*t, &column, level, nonnegative[i])
        })
        .collect()
}

fn column_sd<F: Scalar>(replicates: &[Vec<F>], i: usize) -> F {
    let b = F::from_f64(replicates.len() as f64);
    let mean = replicates.iter().map(|r| r[i]).sum::<F>() / b;
    let ss = replicates
        .iter()
        .map(|r| {
            let d = r[i] - mean;
            d * d
        })
        .sum::<F>();
    (ss / (b - F::one())).sqrt()
}

/// Runs `B` parametric bootstrap replicates: each simulates one
/// observed-size dataset at `theta_hat` and re-estimates with the full
/// multi-start scheme of `config` on that dataset's summaries.
pub fn bootstrap_replicates<F, M>(
    theta_hat: &[F],
    model: &M,
    prior: Option<&dyn Prior<F>>,
    config: &RunConfig<F>,
    b: usize,
    key: StreamKey,
) -> Result<Vec<Vec<F>>>
where
    F: Scalar,
    M: SimulatorModel<F>,
{
    bootstrap_replicates_with(theta_hat, model, b, key, |observed_key, estimate_key| {
        let mut rng = observed_key.rng();
        let data = model.simulate(theta_hat, &mut rng)?;
        let observed = model.summarize(&data)?;
        let result = multi_start_estimate(model, &observed, prior, config, estimate_key)?;
        Ok(result.theta_aml)
    })
}

/// Replicate driver generic over the estimator; the closure receives the
/// dataset stream and the estimation stream of each replicate.
pub fn bootstrap_replicates_with<F, M, E>(
    theta_hat: &[F],
    model: &M,
    b: usize,
    key: StreamKey,
    replicate: E,
) -> Result<Vec<Vec<F>>>
where
    F: Scalar,
    M: SimulatorModel<F>,
    E: Fn(StreamKey, StreamKey) -> Result<Vec<F>> + Sync,
{
    if b < 2 {
        return Err(AmlError::InsufficientData {
            context: "bootstrap replicates",
            min: 2,
            got: b,
        });
    }
    if theta_hat.len() != model.parameter_dim() {
        return Err(AmlError::DimensionMismatch {
            expected: model.parameter_dim(),
            got: theta_hat.len(),
        });
    }
    (0..b)
        .into_par_iter()
        .map(|i| {
            let rep = key.child(i as u64);
            replicate(rep.child(0), rep.child(1))
        })
        .collect()
}

/// Assembles the full bootstrap report from a replicate matrix.
pub fn analyze_replicates<F: Scalar>(
    theta_hat: &[F],
    replicates: Vec<Vec<F>>,
    level: F,
    simultaneous: bool,
    nonnegative: &[bool],
) -> Result<BootstrapResult<F>> {
    if replicates.len() < 2 {
        return Err(AmlError::InsufficientData {
            context: "bootstrap analysis",
            min: 2,
            got: replicates.len(),
        });
    }
    let p = theta_hat.len();
    for r in &replicates {
        if r.len() != p {
            return Err(AmlError::DimensionMismatch {
                expected: p,
                got: r.len(),
            });
        }
    }
    let cis = if simultaneous {
        simultaneous_ci(theta_hat, &replicates, level, nonnegative)?
    } else {
        coordinate_cis(theta_hat, &replicates, level, nonnegative)?
    };
    Ok(BootstrapResult {
        bias_corrected: bias_corrected_estimate(theta_hat, &replicates)?,
        se: (0..p).map(|i| column_sd(&replicates, i)).collect(),
        ci_lower: cis.iter().map(|c| c.lower).collect(),
        ci_upper: cis.iter().map(|c| c.upper).collect(),
        raw_ci_lower: cis.iter().map(|c| c.raw_lower).collect(),
        raw_ci_upper: cis.iter().map(|c| c.raw_upper).collect(),
        theta_hat: theta_hat.to_vec(),
        replicates,
        level,
        simultaneous,
    })
}
