//! The subcommand implementations.

use std::path::Path;

use aml::bootstrap::{analyze_replicates, bootstrap_replicates};
use aml::estimator::{multi_start_estimate, Mode, MultiStartResult, RunConfig};
use aml::kde::SummaryVector;
use aml::models::SimulatorModel;
use aml::StreamKey;
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::config::{ModelKind, ResolvedRun};
use crate::error::{AppError, AppResult};
use crate::output::{
    fmt_float, write_csv, write_json, write_trajectory_csv, BootstrapReport, EstimateResult,
    ManifestArgs, RunManifest,
};

// Top-level stream of each command, split from the master seed.
const STREAM_ESTIMATE: u64 = 0;
const STREAM_BOOTSTRAP: u64 = 1;
const STREAM_REPLICATE_DENSITY: u64 = 2;
const STREAM_BIAS_CURVE: u64 = 3;

fn multi_start(
    model: &ModelKind,
    observed: &SummaryVector<f64>,
    config: &RunConfig<f64>,
    key: StreamKey,
) -> Result<MultiStartResult<f64>> {
    let result = match model {
        ModelKind::Normal(m) => multi_start_estimate(m, observed, None, config, key),
        ModelKind::Mg1(m) => multi_start_estimate(m, observed, None, config, key),
    };
    result.map_err(|e| anyhow!("estimation failed: {e}"))
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Ml => "ml",
        Mode::Map => "map",
    }
}

pub fn cmd_estimate(setup: &ResolvedRun, out_dir: &Path, threads: Option<usize>) -> AppResult<()> {
    let manifest = RunManifest::begin(
        "estimate",
        &setup.config,
        ManifestArgs {
            threads,
            ..Default::default()
        },
    );
    manifest.write(out_dir)?;

    let key = StreamKey::from_seed(setup.config.master_seed).child(STREAM_ESTIMATE);
    let result = multi_start(&setup.model, &setup.observed, &setup.run, key)?;

    let report = EstimateResult::new(
        setup.model.name(),
        mode_name(setup.mode),
        setup.config.master_seed,
        setup.observed.values(),
        &result,
    );
    write_json(&out_dir.join("result.json"), &report)?;
    let mut outputs = vec!["result.json".to_string()];
    for (i, trajectory) in result.trajectories.iter().enumerate() {
        let name = format!("trajectory_{i:02}.csv");
        write_trajectory_csv(&out_dir.join(&name), trajectory)?;
        outputs.push(name);
    }
    manifest.complete(out_dir, outputs)?;
    Ok(())
}

pub fn cmd_bootstrap(
    setup: &ResolvedRun,
    estimate_file: &Path,
    replicates: usize,
    out_dir: &Path,
    threads: Option<usize>,
) -> AppResult<()> {
    if replicates < 2 {
        return Err(AppError::Config(anyhow!(
            "--replicates must be at least 2 for a bootstrap"
        )));
    }
    // a missing or unreadable prior estimate is a runtime failure
    let text = std::fs::read_to_string(estimate_file)
        .with_context(|| format!("cannot read estimate file {}", estimate_file.display()))
        .map_err(AppError::Runtime)?;
    let estimate: EstimateResult = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse estimate file {}", estimate_file.display()))
        .map_err(AppError::Runtime)?;
    let p = setup.model.parameter_dim();
    if estimate.estimate.len() != p {
        return Err(AppError::Config(anyhow!(
            "estimate file has {} coordinates but the model has {p}",
            estimate.estimate.len()
        )));
    }

    let manifest = RunManifest::begin(
        "bootstrap",
        &setup.config,
        ManifestArgs {
            estimate_file: Some(estimate_file.display().to_string()),
            replicates: Some(replicates),
            threads,
            ..Default::default()
        },
    );
    manifest.write(out_dir)?;

    let level = setup.config.bootstrap.level.unwrap_or(0.95);
    let simultaneous = setup.config.bootstrap.simultaneous.unwrap_or(false);
    let key = StreamKey::from_seed(setup.config.master_seed).child(STREAM_BOOTSTRAP);
    let (rows, nonnegative) = match &setup.model {
        ModelKind::Normal(m) => (
            bootstrap_replicates(&estimate.estimate, m, None, &setup.run, replicates, key),
            m.nonnegative_coordinates(),
        ),
        ModelKind::Mg1(m) => (
            bootstrap_replicates(&estimate.estimate, m, None, &setup.run, replicates, key),
            m.nonnegative_coordinates(),
        ),
    };
    let rows = rows.map_err(|e| anyhow!("bootstrap failed: {e}"))?;
    let analysis = analyze_replicates(&estimate.estimate, rows, level, simultaneous, &nonnegative)
        .map_err(|e| anyhow!("bootstrap analysis failed: {e}"))?;

    let report = BootstrapReport {
        version: crate::output::VERSION.to_string(),
        model: setup.model.name().to_string(),
        master_seed: setup.config.master_seed,
        replicate_count: replicates,
        level,
        simultaneous,
        theta_hat: analysis.theta_hat.clone(),
        bias_corrected: analysis.bias_corrected.clone(),
        se: analysis.se.clone(),
        ci_lower: analysis.ci_lower.clone(),
        ci_upper: analysis.ci_upper.clone(),
        raw_ci_lower: analysis.raw_ci_lower.clone(),
        raw_ci_upper: analysis.raw_ci_upper.clone(),
    };
    write_json(&out_dir.join("bootstrap.json"), &report)?;

    let mut header = String::from("replicate");
    for i in 1..=p {
        header.push_str(&format!(",theta_{i}"));
    }
    let csv_rows: Vec<Vec<String>> = analysis
        .replicates
        .iter()
        .enumerate()
        .map(|(b, row)| {
            let mut out = Vec::with_capacity(p + 1);
            out.push(b.to_string());
            out.extend(row.iter().map(|x| fmt_float(*x)));
            out
        })
        .collect();
    write_csv(&out_dir.join("replicates.csv"), &header, &csv_rows)?;

    manifest.complete(
        out_dir,
        vec!["bootstrap.json".to_string(), "replicates.csv".to_string()],
    )?;
    Ok(())
}

pub fn cmd_replicate_density(
    setup: &ResolvedRun,
    replicates: usize,
    out_dir: &Path,
    threads: Option<usize>,
) -> AppResult<()> {
    if replicates == 0 {
        return Err(AppError::Config(anyhow!("--replicates must be positive")));
    }
    let manifest = RunManifest::begin(
        "replicate-density",
        &setup.config,
        ManifestArgs {
            replicates: Some(replicates),
            threads,
            ..Default::default()
        },
    );
    manifest.write(out_dir)?;

    let key = StreamKey::from_seed(setup.config.master_seed).child(STREAM_REPLICATE_DENSITY);
    let estimates: Vec<(Vec<f64>, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            multi_start(&setup.model, &setup.observed, &setup.run, key.child(r as u64))
                .map(|res| (res.theta_aml, res.log_likelihood.log_value))
        })
        .collect::<Result<_>>()?;

    let p = setup.model.parameter_dim();
    let mut header = String::from("replicate");
    for i in 1..=p {
        header.push_str(&format!(",theta_{i}"));
    }
    header.push_str(",log_likelihood");
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .enumerate()
        .map(|(r, (theta, log_lik))| {
            let mut out = Vec::with_capacity(p + 2);
            out.push(r.to_string());
            out.extend(theta.iter().map(|x| fmt_float(*x)));
            out.push(fmt_float(*log_lik));
            out
        })
        .collect();
    write_csv(&out_dir.join("replicate_density.csv"), &header, &rows)?;
    manifest.complete(out_dir, vec!["replicate_density.csv".to_string()])?;
    Ok(())
}

pub fn cmd_bias_curve(
    setup: &ResolvedRun,
    checkpoints: &[u64],
    replicates: usize,
    out_dir: &Path,
    threads: Option<usize>,
) -> AppResult<()> {
    if replicates == 0 {
        return Err(AppError::Config(anyhow!("--replicates must be positive")));
    }
    if checkpoints.is_empty() {
        return Err(AppError::Config(anyhow!("--checkpoints must not be empty")));
    }
    for pair in checkpoints.windows(2) {
        if pair[1] <= pair[0] {
            return Err(AppError::Config(anyhow!(
                "--checkpoints must be strictly increasing"
            )));
        }
    }
    if *checkpoints.last().unwrap() > setup.run.k_max {
        return Err(AppError::Config(anyhow!(
            "checkpoint {} exceeds k_max = {}",
            checkpoints.last().unwrap(),
            setup.run.k_max
        )));
    }
    let reference = match (
        &setup.config.bias_curve.reference,
        &setup.config.observed.true_theta,
    ) {
        (Some(r), _) => r.clone(),
        (None, Some(t)) => t.clone(),
        (None, None) => {
            return Err(AppError::Config(anyhow!(
                "bias_curve.reference is required when the observed data is not synthetic"
            )))
        }
    };
    let p = setup.model.parameter_dim();
    if reference.len() != p {
        return Err(AppError::Config(anyhow!(
            "bias_curve.reference: expected {p} entries, got {}",
            reference.len()
        )));
    }

    let manifest = RunManifest::begin(
        "bias-curve",
        &setup.config,
        ManifestArgs {
            replicates: Some(replicates),
            checkpoints: Some(checkpoints.to_vec()),
            threads,
            ..Default::default()
        },
    );
    manifest.write(out_dir)?;

    // no early stopping: snapshots must exist at every checkpoint
    let mut run_config = setup.run.clone();
    run_config.min_iterations = run_config.k_max;

    let key = StreamKey::from_seed(setup.config.master_seed).child(STREAM_BIAS_CURVE);
    let snapshots: Vec<Vec<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            multi_start(&setup.model, &setup.observed, &run_config, key.child(r as u64)).map(
                |res| {
                    let winner = &res.trajectories[res.selected];
                    checkpoints
                        .iter()
                        .map(|k| winner.iterates[*k as usize].clone())
                        .collect()
                },
            )
        })
        .collect::<Result<_>>()?;

    let mut header = String::from("checkpoint");
    for i in 1..=p {
        header.push_str(&format!(",abs_bias_{i}"));
    }
    for i in 1..=p {
        header.push_str(&format!(",se_{i}"));
    }
    let r_f = replicates as f64;
    let rows: Vec<Vec<String>> = checkpoints
        .iter()
        .enumerate()
        .map(|(ci, k)| {
            let mut row = Vec::with_capacity(2 * p + 1);
            row.push(k.to_string());
            let mut ses = Vec::with_capacity(p);
            for i in 0..p {
                let mean = snapshots.iter().map(|s| s[ci][i]).sum::<f64>() / r_f;
                row.push(fmt_float((mean - reference[i]).abs()));
                let se = if replicates > 1 {
                    let ss = snapshots
                        .iter()
                        .map(|s| (s[ci][i] - mean) * (s[ci][i] - mean))
                        .sum::<f64>();
                    (ss / (r_f - 1.0)).sqrt()
                } else {
                    f64::NAN
                };
                ses.push(se);
            }
            row.extend(ses.into_iter().map(fmt_float));
            row
        })
        .collect();
    write_csv(&out_dir.join("bias_curve.csv"), &header, &rows)?;
    manifest.complete(out_dir, vec!["bias_curve.csv".to_string()])?;
    Ok(())
}

pub fn cmd_validate(setup: &ResolvedRun) -> AppResult<()> {
    let d = match &setup.model {
        ModelKind::Normal(m) => m.summary_dim(),
        ModelKind::Mg1(m) => m.summary_dim(),
    };
    println!("configuration OK");
    println!(
        "model: {} (p = {}, d = {d}), mode: {}, n = {}, k_max = {}, starts: {} of {}, seed: {}",
        setup.model.name(),
        setup.model.parameter_dim(),
        mode_name(setup.mode),
        setup.run.n,
        setup.run.k_max,
        setup.run.n_starts,
        setup.run.n_start_candidates,
        setup.config.master_seed,
    );
    Ok(())
}

impl EstimateResult {
    pub fn new(
        model: &str,
        mode: &str,
        master_seed: u64,
        observed: &[f64],
        result: &MultiStartResult<f64>,
    ) -> Self {
        crate::output::EstimateResult {
            version: crate::output::VERSION.to_string(),
            model: model.to_string(),
            mode: mode.to_string(),
            master_seed,
            estimate: result.theta_aml.clone(),
            log_likelihood: result.log_likelihood.log_value,
            degenerate: result.log_likelihood.degenerate,
            selected_start: result.selected,
            observed_summary: observed.to_vec(),
            starts: result
                .trajectories
                .iter()
                .enumerate()
                .map(|(i, t)| crate::output::StartReport {
                    start: result.starts[i].clone(),
                    final_theta: t.final_theta.clone(),
                    final_log_likelihood: result.final_log_likelihoods[i].log_value,
                    converged_at: t.converged_at,
                    iterations: (t.iterates.len() - 1) as u64,
                    diagnostic_rounds: t.diagnostics.len(),
                    gain_adjustments: t
                        .diagnostics
                        .iter()
                        .filter(|d| d.verdict.a_adjusted)
                        .count(),
                })
                .collect(),
        }
    }
}
