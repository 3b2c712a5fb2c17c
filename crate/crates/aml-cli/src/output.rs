//! Run directory artifacts: manifest, result JSON and CSV emission.

use std::path::{Path, PathBuf};

use aml::estimator::{MultiStartResult, RunTrajectory};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Extra per-command arguments recorded in the manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ManifestArgs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// The run manifest; a completed run directory always holds a manifest with
/// `status = "complete"` together with its result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub created_utc: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_utc: Option<String>,
    pub master_seed: u64,
    pub args: ManifestArgs,
    pub config: ConfigFile,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn begin(command: &str, config: &ConfigFile, args: ManifestArgs) -> Self {
        RunManifest {
            command: command.to_string(),
            version: VERSION.to_string(),
            status: "incomplete".to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            finished_utc: None,
            master_seed: config.master_seed,
            args,
            config: config.clone(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("manifest.json"), self)
    }

    pub fn complete(mut self, out_dir: &Path, outputs: Vec<String>) -> Result<()> {
        self.status = "complete".to_string();
        self.finished_utc = Some(chrono::Utc::now().to_rfc3339());
        self.outputs = outputs;
        self.write(out_dir)
    }
}

/// Per-start summary in the estimate result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub start: Vec<f64>,
    pub final_theta: Vec<f64>,
    /// Fresh likelihood estimate used for the final comparison.
    pub final_log_likelihood: f64,
    pub converged_at: Option<u64>,
    pub iterations: u64,
    pub diagnostic_rounds: usize,
    pub gain_adjustments: usize,
}

/// The estimate result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub version: String,
    pub model: String,
    pub mode: String,
    pub master_seed: u64,
    pub estimate: Vec<f64>,
    pub log_likelihood: f64,
    pub degenerate: bool,
    pub selected_start: usize,
    pub observed_summary: Vec<f64>,
    pub starts: Vec<StartReport>,
}

impl EstimateResult {
    pub fn new(
        model: &str,
        mode: &str,
        master_seed: u64,
        observed: &[f64],
        result: &MultiStartResult<f64>,
    ) -> Self {
        EstimateResult {
            version: VERSION.to_string(),
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
                .map(|(i, t)| StartReport {
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

/// Bootstrap result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub version: String,
    pub model: String,
    pub master_seed: u64,
    pub replicate_count: usize,
    pub level: f64,
    pub simultaneous: bool,
    pub theta_hat: Vec<f64>,
    pub bias_corrected: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub raw_ci_lower: Vec<f64>,
    pub raw_ci_upper: Vec<f64>,
}

/// Serializes a value as pretty JSON with a trailing newline; reruns with
/// the same inputs produce byte-identical files.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body =
        serde_json::to_string_pretty(value).context("cannot serialize result to JSON")?;
    body.push('\n');
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Decimal with 17 significant digits: enough to round-trip any f64.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut body = String::with_capacity(rows.len() * 64 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for row in rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes one trajectory CSV: iteration, coordinates, the active gains and
/// the diagnostic events.
pub fn write_trajectory_csv(path: &Path, trajectory: &RunTrajectory<f64>) -> Result<()> {
    let p = trajectory.final_theta.len();
    let mut header = String::from("iteration");
    for i in 1..=p {
        header.push_str(&format!(",theta_{i}"));
    }
    header.push_str(",c_k");
    for i in 1..=p {
        header.push_str(&format!(",a_k_{i}"));
    }
    header.push_str(",event");

    // the gain vector in force at iteration k reflects all adjustments from
    // diagnostic rounds strictly before k
    let schedule = &trajectory.calibrated;
    let mut rows = Vec::with_capacity(trajectory.iterates.len());
    let mut diag_idx = 0usize;
    let mut current_a = schedule.a.clone();
    for (k, theta) in trajectory.iterates.iter().enumerate() {
        let k = k as u64;
        while diag_idx < trajectory.diagnostics.len()
            && trajectory.diagnostics[diag_idx].iteration < k
        {
            current_a = trajectory.diagnostics[diag_idx].a_after.clone();
            diag_idx += 1;
        }
        let mut row = Vec::with_capacity(2 * p + 3);
        row.push(k.to_string());
        for x in theta {
            row.push(fmt_float(*x));
        }
        if k == 0 {
            row.push(String::new());
            for _ in 0..p {
                row.push(String::new());
            }
            row.push("calibrated".to_string());
        } else {
            let denom = ((k + schedule.big_a) as f64).powf(schedule.alpha);
            row.push(fmt_float(schedule.c / (k as f64).powf(schedule.gamma)));
            for a in &current_a {
                row.push(fmt_float(a / denom));
            }
            row.push(event_at(trajectory, k));
        }
        rows.push(row);
    }
    write_csv(path, &header, &rows)
}

fn event_at(trajectory: &RunTrajectory<f64>, k: u64) -> String {
    let Some(record) = trajectory.diagnostics.iter().find(|d| d.iteration == k) else {
        return String::new();
    };
    let mut events = Vec::new();
    let flagged = |flags: &[bool]| -> String {
        flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join("+")
    };
    if record.verdict.trend_detected.iter().any(|f| *f) {
        events.push(format!("trend[{}]", flagged(&record.verdict.trend_detected)));
    }
    if record.verdict.range_exceeded.iter().any(|f| *f) {
        events.push(format!("range[{}]", flagged(&record.verdict.range_exceeded)));
    }
    events.push(
        if record.verdict.growth_detected {
            "growth".to_string()
        } else {
            format!("no-growth({})", record.verdict.consecutive_no_growth)
        },
    );
    if record.verdict.a_adjusted {
        events.push("adjusted".to_string());
    }
    if trajectory.converged_at == Some(k) {
        events.push("converged".to_string());
    }
    events.join(";")
}

/// Resolves the output directory: flag, then `AML_OUT_DIR`, then
/// `./aml-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("AML_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("aml-out"))
}
