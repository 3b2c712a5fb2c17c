//! Orchestration of a full estimation run: starting-point screening, the
//! main ascent loop wiring perturbations, likelihood estimates and the
//! periodic diagnostics, MAP mode, and multi-start selection.
//!
//! # Normalized search space
//!
//! Internally every run maps the parameter box affinely onto the unit box
//! `[0, 1]^p` and performs all perturbation, clamping, projection and
//! diagnostic arithmetic there; a single scalar perturbation radius
//! `c = c_fraction` is then exact in every coordinate. Models and priors
//! always receive coordinates mapped back to the original box, and reported
//! trajectories are in original coordinates.
//!
//! # Randomness
//!
//! One [`StreamKey`] drives a whole run. Children are split per purpose
//! (screening, calibration, iterations, diagnostics, final comparison) and
//! per index within a purpose, so any work unit can execute on any thread
//! without affecting the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AmlError, Result};
use crate::kde::{
    kde_log_likelihood, silverman_bandwidth, BandwidthHistory, KdeConfig, LikelihoodEstimate,
    SummaryVector,
};
use crate::models::{Prior, SimulatorModel, UniformPrior};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::spsa::{project_box, GainSchedule, ParameterSpace, Perturbation, STEP_CLAMP_FRACTION};
use crate::tuning::{
    apply_adjustments, calibrate_gains, range_test, trend_pvalues, welch_one_sided_pvalue,
    ConvergenceTracker, DiagnosticVerdict, TuningConfig,
};

// Child-stream labels of a run key.
const STREAM_SCREEN: u64 = 0;
const STREAM_RUNS: u64 = 1;
const STREAM_FINAL: u64 = 2;
const STREAM_CALIBRATION: u64 = 0;
const STREAM_ITERATIONS: u64 = 1;
const STREAM_DIAGNOSTICS: u64 = 2;

/// Estimation target: the likelihood maximum or the posterior maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ml,
    Map,
}

/// Configuration of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<F> {
    /// Simulations per likelihood estimate.
    pub n: usize,
    /// Iteration budget per start.
    pub k_max: u64,
    /// Convergence may only stop the run at or after this iteration.
    pub min_iterations: u64,
    /// Random points screened for starting values.
    pub n_start_candidates: usize,
    /// Screened points that become starts.
    pub n_starts: usize,
    pub mode: Mode,
    pub master_seed: u64,
    pub tuning: TuningConfig<F>,
    pub kde: KdeConfig<F>,
}

impl<F: Scalar> RunConfig<F> {
    /// Paper-scale defaults for a `p`-dimensional model: 100 simulations
    /// per estimate, 5 starts screened from 1000 candidates, 10000
    /// iterations.
    pub fn defaults(p: usize) -> Self {
        let n = 100;
        RunConfig {
            n,
            k_max: 10_000,
            min_iterations: 0,
            n_start_candidates: 1000,
            n_starts: 5,
            mode: Mode::Ml,
            master_seed: 0,
            tuning: TuningConfig::defaults(p, n),
            kde: KdeConfig::default(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n < 2 {
            return Err(AmlError::InvalidParameter(
                "n must be at least 2 (bandwidth estimation needs two samples)".into(),
            ));
        }
        if self.k_max == 0 {
            return Err(AmlError::InvalidParameter("k_max must be positive".into()));
        }
        if self.n_starts == 0 || self.n_starts > self.n_start_candidates {
            return Err(AmlError::InvalidParameter(
                "need 1 <= n_starts <= n_start_candidates".into(),
            ));
        }
        self.tuning.validate(p)?;
        KdeConfig::new(self.kde.smoothing_window, self.kde.zero_threshold)?;
        Ok(())
    }
}

/// Affine bijection between a parameter box and the unit box.
#[derive(Debug, Clone)]
pub struct Normalizer<F> {
    space: ParameterSpace<F>,
}

impl<F: Scalar> Normalizer<F> {
    pub fn new(space: ParameterSpace<F>) -> Self {
        Normalizer { space }
    }

    pub fn to_unit(&self, theta: &[F]) -> Vec<F> {
        theta
            .iter()
            .enumerate()
            .map(|(i, t)| (*t - self.space.lower()[i]) / self.space.range(i))
            .collect()
    }

    pub fn from_unit(&self, unit: &[F]) -> Vec<F> {
        unit.iter()
            .enumerate()
            .map(|(i, u)| self.space.lower()[i] + *u * self.space.range(i))
            .collect()
    }
}

/// A log-likelihood estimator the ascent loop can drive.
///
/// `estimate` is a one-shot estimate (screening, calibration, diagnostics,
/// final comparison); `estimate_pair` evaluates the two perturbed points of
/// one iteration and may maintain shared bandwidth state between them.
pub trait LogLikEvaluator<F: Scalar>: Sync {
    fn estimate(&self, theta: &[F], key: StreamKey) -> Result<LikelihoodEstimate<F>>;

    fn estimate_pair(
        &self,
        theta_minus: &[F],
        theta_plus: &[F],
        _bandwidths: &mut BandwidthHistory<F>,
        key_minus: StreamKey,
        key_plus: StreamKey,
    ) -> Result<(LikelihoodEstimate<F>, LikelihoodEstimate<F>)> {
        Ok((
            self.estimate(theta_minus, key_minus)?,
            self.estimate(theta_plus, key_plus)?,
        ))
    }
}

/// The production evaluator: simulate `n` datasets, summarize, select a
/// bandwidth, and take the kernel density at the observed summaries.
pub struct KdeEvaluator<'a, F: Scalar, M: SimulatorModel<F>> {
    model: &'a M,
    observed: &'a SummaryVector<F>,
    prior: Option<&'a dyn Prior<F>>,
    n: usize,
    kde_cfg: KdeConfig<F>,
}

impl<'a, F: Scalar, M: SimulatorModel<F>> KdeEvaluator<'a, F, M> {
    pub fn new(
        model: &'a M,
        observed: &'a SummaryVector<F>,
        prior: Option<&'a dyn Prior<F>>,
        n: usize,
        kde_cfg: KdeConfig<F>,
    ) -> Result<Self> {
        if observed.dim() != model.summary_dim() {
            return Err(AmlError::DimensionMismatch {
                expected: model.summary_dim(),
                got: observed.dim(),
            });
        }
        if n < 2 {
            return Err(AmlError::InvalidParameter(
                "n must be at least 2".into(),
            ));
        }
        Ok(KdeEvaluator {
            model,
            observed,
            prior,
            n,
            kde_cfg,
        })
    }

    fn simulate_summaries(&self, theta: &[F], key: StreamKey) -> Result<Vec<SummaryVector<F>>> {
        (0..self.n)
            .into_par_iter()
            .map(|j| {
                let mut rng = key.child(j as u64).rng();
                let data = self.model.simulate(theta, &mut rng)?;
                self.model.summarize(&data)
            })
            .collect()
    }

    fn density_at(
        &self,
        theta: &[F],
        samples: &[SummaryVector<F>],
        bandwidth: &crate::kde::BandwidthMatrix<F>,
    ) -> Result<LikelihoodEstimate<F>> {
        let mut est = kde_log_likelihood(self.observed, samples, bandwidth, &self.kde_cfg)?;
        if let Some(prior) = self.prior {
            est.log_value = est.log_value + prior.log_density(theta);
        }
        Ok(est)
    }
}

impl<F: Scalar, M: SimulatorModel<F>> LogLikEvaluator<F> for KdeEvaluator<'_, F, M> {
    fn estimate(&self, theta: &[F], key: StreamKey) -> Result<LikelihoodEstimate<F>> {
        if let Some(prior) = self.prior {
            // outside the prior support the point is simply worst-possible;
            // no simulation needed
            if prior.log_density(theta) == F::neg_infinity() {
                return Ok(LikelihoodEstimate {
                    log_value: F::neg_infinity(),
                    n_points: self.n,
                    degenerate: false,
                });
            }
        }
        let samples = self.simulate_summaries(theta, key)?;
        let bandwidth = silverman_bandwidth(&samples)?;
        self.density_at(theta, &samples, &bandwidth)
    }

    fn estimate_pair(
        &self,
        theta_minus: &[F],
        theta_plus: &[F],
        bandwidths: &mut BandwidthHistory<F>,
        key_minus: StreamKey,
        key_plus: StreamKey,
    ) -> Result<(LikelihoodEstimate<F>, LikelihoodEstimate<F>)> {
        let samples_minus = self.simulate_summaries(theta_minus, key_minus)?;
        let samples_plus = self.simulate_summaries(theta_plus, key_plus)?;
        // Both sides contribute a raw bandwidth estimate to the shared
        // history and are then evaluated under the same smoothed bandwidth.
        bandwidths.push(silverman_bandwidth(&samples_minus)?);
        bandwidths.push(silverman_bandwidth(&samples_plus)?);
        let smoothed = bandwidths.smoothed()?;
        Ok((
            self.density_at(theta_minus, &samples_minus, &smoothed)?,
            self.density_at(theta_plus, &samples_plus, &smoothed)?,
        ))
    }
}

/// One-shot (or history-smoothed) likelihood estimate at `theta`.
///
/// With `bandwidths = None` the bandwidth is the raw per-coordinate rule on
/// this estimate's own samples; with a history the raw estimate is pushed
/// first and the moving average is used.
#[allow(clippy::too_many_arguments)]
pub fn estimate_log_likelihood<F, M>(
    theta: &[F],
    model: &M,
    observed: &SummaryVector<F>,
    n: usize,
    bandwidths: Option<&mut BandwidthHistory<F>>,
    prior: Option<&dyn Prior<F>>,
    kde_cfg: &KdeConfig<F>,
    key: StreamKey,
) -> Result<LikelihoodEstimate<F>>
where
    F: Scalar,
    M: SimulatorModel<F>,
{
    let evaluator = KdeEvaluator::new(model, observed, prior, n, kde_cfg.clone())?;
    match bandwidths {
        None => evaluator.estimate(theta, key),
        Some(history) => {
            if let Some(prior) = prior {
                if prior.log_density(theta) == F::neg_infinity() {
                    return Ok(LikelihoodEstimate {
                        log_value: F::neg_infinity(),
                        n_points: n,
                        degenerate: false,
                    });
                }
            }
            let samples = evaluator.simulate_summaries(theta, key)?;
            history.push(silverman_bandwidth(&samples)?);
            let smoothed = history.smoothed()?;
            evaluator.density_at(theta, &samples, &smoothed)
        }
    }
}

/// One diagnostic round as recorded in a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord<F> {
    pub iteration: u64,
    pub verdict: DiagnosticVerdict,
    pub trend_pvalues: Vec<F>,
    pub convergence_pvalue: F,
    pub mean_log_lik_old: F,
    pub mean_log_lik_new: F,
    pub a_before: Vec<F>,
    pub a_after: Vec<F>,
}

/// Record of one ascent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory<F> {
    /// Iterates in original coordinates, from the (projected) start to the
    /// final point.
    pub iterates: Vec<Vec<F>>,
    /// `(iteration, mean fresh log-likelihood)` at each diagnostic round.
    pub log_lik_checks: Vec<(u64, F)>,
    pub diagnostics: Vec<DiagnosticRecord<F>>,
    /// Iteration of the stopping diagnostic round, when the run converged.
    pub converged_at: Option<u64>,
    pub final_theta: Vec<F>,
    /// The calibrated schedule the run started with (normalized units).
    pub calibrated: GainSchedule<F>,
}

/// Result of a multi-start estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartResult<F> {
    pub theta_aml: Vec<F>,
    /// Fresh likelihood estimate at the selected point.
    pub log_likelihood: LikelihoodEstimate<F>,
    /// Index of the selected run.
    pub selected: usize,
    pub starts: Vec<Vec<F>>,
    pub trajectories: Vec<RunTrajectory<F>>,
    /// Fresh comparison estimates, one per run.
    pub final_log_likelihoods: Vec<LikelihoodEstimate<F>>,
}

fn resolve_prior<'a, F: Scalar>(
    mode: Mode,
    prior: Option<&'a dyn Prior<F>>,
    uniform: &'a UniformPrior<F>,
) -> Option<&'a dyn Prior<F>> {
    match mode {
        Mode::Ml => None,
        Mode::Map => Some(prior.unwrap_or(uniform)),
    }
}

/// Draws `n_start_candidates` uniform points on the box, estimates the
/// likelihood once at each, and returns the `n_starts` best (ties broken by
/// draw order), in original coordinates.
pub fn screen_starting_points<F, M>(
    model: &M,
    observed: &SummaryVector<F>,
    prior: Option<&dyn Prior<F>>,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<Vec<Vec<F>>>
where
    F: Scalar,
    M: SimulatorModel<F>,
{
    let uniform = UniformPrior::new(model.space().clone());
    let prior = resolve_prior(config.mode, prior, &uniform);
    let evaluator = KdeEvaluator::new(model, observed, prior, config.n, config.kde.clone())?;
    screen_with_evaluator(&evaluator, model.space(), config, key)
}

/// Screening against any [`LogLikEvaluator`].
pub fn screen_with_evaluator<F, E>(
    evaluator: &E,
    space: &ParameterSpace<F>,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<Vec<Vec<F>>>
where
    F: Scalar,
    E: LogLikEvaluator<F>,
{
    config.validate(space.dim())?;
    let candidates: Vec<Vec<F>> = (0..config.n_start_candidates)
        .map(|i| {
            let mut rng = key.child(0).child(i as u64).rng();
            space.sample_uniform(&mut rng)
        })
        .collect();
    let scores: Vec<F> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            evaluator
                .estimate(theta, key.child(1).child(i as u64))
                .map(|est| est.log_value)
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    Ok(order
        .into_iter()
        .take(config.n_starts)
        .map(|i| candidates[i].clone())
        .collect())
}

/// Runs the full ascent from `start` against a simulator model.
pub fn run_aml<F, M>(
    start: &[F],
    model: &M,
    observed: &SummaryVector<F>,
    prior: Option<&dyn Prior<F>>,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<RunTrajectory<F>>
where
    F: Scalar,
    M: SimulatorModel<F>,
{
    config.validate(model.parameter_dim())?;
    let uniform = UniformPrior::new(model.space().clone());
    let prior = resolve_prior(config.mode, prior, &uniform);
    let evaluator = KdeEvaluator::new(model, observed, prior, config.n, config.kde.clone())?;
    run_with_evaluator(start, model.space(), &evaluator, config, key)
}

/// Ascent loop against any [`LogLikEvaluator`]; `start` is in the original
/// coordinates of `space`.
pub fn run_with_evaluator<F, E>(
    start: &[F],
    space: &ParameterSpace<F>,
    evaluator: &E,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<RunTrajectory<F>>
where
    F: Scalar,
    E: LogLikEvaluator<F>,
{
    let p = space.dim();
    if start.len() != p {
        return Err(AmlError::DimensionMismatch {
            expected: p,
            got: start.len(),
        });
    }
    if !space.contains(start) {
        return Err(AmlError::InvalidParameter(
            "starting point lies outside the parameter space".into(),
        ));
    }
    config.validate(p)?;

    let normalizer = Normalizer::new(space.clone());
    let unit_space = ParameterSpace::<F>::unit(p);
    let two = F::from_f64(2.0);
    let clamp_cap = F::from_f64(STEP_CLAMP_FRACTION); // unit range is 1

    // calibration speaks unit coordinates; the evaluator raw ones
    let unit_eval = |unit: &[F], k: StreamKey| -> Result<F> {
        Ok(evaluator
            .estimate(&normalizer.from_unit(unit), k)?
            .log_value)
    };
    let start_unit = normalizer.to_unit(start);
    let calibrated = calibrate_gains(
        &start_unit,
        &unit_space,
        &config.tuning,
        config.k_max,
        &unit_eval,
        key.child(STREAM_CALIBRATION),
    )?;
    let mut schedule = calibrated.clone();

    let mut bandwidths = BandwidthHistory::new(config.kde.smoothing_window);
    let mut tracker = ConvergenceTracker::new();
    let mut current = project_box(&start_unit, &unit_space, schedule.c_at(1)?);
    let mut iterates = vec![current.clone()];
    let mut diagnostics = Vec::new();
    let mut log_lik_checks = Vec::new();
    let mut converged_at = None;

    let k0 = config.tuning.k0;
    for k in 1..=config.k_max {
        let iter_key = key.child(STREAM_ITERATIONS).child(k);
        let delta = Perturbation::<F>::sample(p, &mut iter_key.child(0).rng());
        let (a_k, c_k) = schedule.at(k)?;

        let minus_unit: Vec<F> = current
            .iter()
            .zip(delta.signs())
            .map(|(t, s)| *t - c_k * *s)
            .collect();
        let plus_unit: Vec<F> = current
            .iter()
            .zip(delta.signs())
            .map(|(t, s)| *t + c_k * *s)
            .collect();
        let (est_minus, est_plus) = evaluator.estimate_pair(
            &normalizer.from_unit(&minus_unit),
            &normalizer.from_unit(&plus_unit),
            &mut bandwidths,
            iter_key.child(1),
            iter_key.child(2),
        )?;

        // Tolerant step arithmetic: an infinite log difference (a MAP side
        // outside the prior support) saturates at the clamp, and NaN
        // (both sides -inf) contributes no movement.
        let scale = (est_plus.log_value - est_minus.log_value) / (two * c_k);
        let moved: Vec<F> = current
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let raw = a_k[i] * delta.signs()[i] * scale;
                let step = if raw.is_nan() {
                    F::zero()
                } else {
                    raw.max(-clamp_cap).min(clamp_cap)
                };
                *t + step
            })
            .collect();
        current = project_box(&moved, &unit_space, schedule.c_at(k + 1)?);
        iterates.push(current.clone());

        if k % k0 == 0 && k >= k0 {
            let round_key = key.child(STREAM_DIAGNOSTICS).child(k / k0);
            let window = &iterates[(k - k0) as usize..=k as usize];
            let trend_pvals = trend_pvalues(window)?;
            let trend_flags: Vec<bool> = trend_pvals
                .iter()
                .map(|pv| *pv < config.tuning.alpha_trend)
                .collect();
            let range_flags = range_test(window, &unit_space, config.tuning.range_span_threshold)?;

            let old_point = normalizer.from_unit(&window[0]);
            let new_point = normalizer.from_unit(&current);
            let n2 = config.tuning.n2;
            let side = |point: &[F], label: u64| -> Result<Vec<F>> {
                (0..n2)
                    .into_par_iter()
                    .map(|i| {
                        evaluator
                            .estimate(point, round_key.child(label).child(i as u64))
                            .map(|est| est.log_value)
                    })
                    .collect()
            };
            let old_vals = side(&old_point, 0)?;
            let new_vals = side(&new_point, 1)?;
            let conv_pvalue = welch_one_sided_pvalue(&old_vals, &new_vals)?;
            let growth = conv_pvalue < config.tuning.alpha_conv;

            let a_before = schedule.a.clone();
            let (adjusted_schedule, a_adjusted) =
                apply_adjustments(&trend_flags, &range_flags, &schedule, config.tuning.f)?;
            schedule = adjusted_schedule;
            let consecutive = tracker.record(growth, a_adjusted);

            let n2_f = F::from_f64(n2 as f64);
            let mean_old = old_vals.iter().copied().sum::<F>() / n2_f;
            let mean_new = new_vals.iter().copied().sum::<F>() / n2_f;
            log_lik_checks.push((k, mean_new));
            diagnostics.push(DiagnosticRecord {
                iteration: k,
                verdict: DiagnosticVerdict {
                    trend_detected: trend_flags,
                    range_exceeded: range_flags,
                    growth_detected: growth,
                    consecutive_no_growth: consecutive,
                    a_adjusted,
                },
                trend_pvalues: trend_pvals,
                convergence_pvalue: conv_pvalue,
                mean_log_lik_old: mean_old,
                mean_log_lik_new: mean_new,
                a_before,
                a_after: schedule.a.clone(),
            });

            if tracker.converged() && k >= config.min_iterations {
                converged_at = Some(k);
                break;
            }
        }
    }

    let raw_iterates: Vec<Vec<F>> = iterates.iter().map(|u| normalizer.from_unit(u)).collect();
    let final_theta = raw_iterates.last().expect("at least the start").clone();
    Ok(RunTrajectory {
        iterates: raw_iterates,
        log_lik_checks,
        diagnostics,
        converged_at,
        final_theta,
        calibrated,
    })
}

/// Screens starts, runs the ascent from each, re-estimates the likelihood
/// at every final point with fresh simulations, and returns the best.
pub fn multi_start_estimate<F, M>(
    model: &M,
    observed: &SummaryVector<F>,
    prior: Option<&dyn Prior<F>>,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<MultiStartResult<F>>
where
    F: Scalar,
    M: SimulatorModel<F>,
{
    let uniform = UniformPrior::new(model.space().clone());
    let prior = resolve_prior(config.mode, prior, &uniform);
    let evaluator = KdeEvaluator::new(model, observed, prior, config.n, config.kde.clone())?;
    multi_start_with_evaluator(&evaluator, model.space(), config, key)
}

/// Multi-start scheme against any [`LogLikEvaluator`].
pub fn multi_start_with_evaluator<F, E>(
    evaluator: &E,
    space: &ParameterSpace<F>,
    config: &RunConfig<F>,
    key: StreamKey,
) -> Result<MultiStartResult<F>>
where
    F: Scalar,
    E: LogLikEvaluator<F>,
{
    config.validate(space.dim())?;
    let starts = screen_with_evaluator(evaluator, space, config, key.child(STREAM_SCREEN))?;
    let trajectories: Vec<RunTrajectory<F>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            run_with_evaluator(
                start,
                space,
                evaluator,
                config,
                key.child(STREAM_RUNS).child(i as u64),
            )
        })
        .collect::<Result<_>>()?;

    let finals: Vec<LikelihoodEstimate<F>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluator.estimate(&t.final_theta, key.child(STREAM_FINAL).child(i as u64)))
        .collect::<Result<_>>()?;
    let selected = finals
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| {
            a.log_value
                .partial_cmp(&b.log_value)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(j.cmp(i)) // ties: keep the lowest index
        })
        .map(|(i, _)| i)
        .expect("n_starts >= 1");

    Ok(MultiStartResult {
        theta_aml: trajectories[selected].final_theta.clone(),
        log_likelihood: finals[selected],
        selected,
        starts,
        trajectories,
        final_log_likelihoods: finals,
    })
}
