//! Run configuration: TOML ingestion, `--override` handling, validation,
//! and construction of the model and observed summaries.

use std::path::Path;

use aml::estimator::Mode;
use aml::kde::SummaryVector;
use aml::models::{Mg1Model, NormalModel, NormalSummarySet, SimulatorModel};
use aml::spsa::ParameterSpace;
use aml::{KdeConfig, RunConfig, StreamKey, TuningConfig};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// A scalar broadcast to every coordinate, or an explicit per-coordinate
/// list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    fn resolve(&self, p: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(x) => Ok(vec![*x; p]),
            ScalarOrVec::Vec(v) if v.len() == p => Ok(v.clone()),
            ScalarOrVec::Vec(v) => bail!(
                "{what}: expected {p} entries, got {}",
                v.len()
            ),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub k0: Option<u64>,
    pub b: Option<ScalarOrVec>,
    pub c_fraction: Option<f64>,
    pub f: Option<f64>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub alpha_trend: Option<f64>,
    pub alpha_conv: Option<f64>,
    pub range_span_threshold: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSection {
    pub smoothing_window: Option<usize>,
    pub zero_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    /// Normal model: observations per dataset.
    pub sample_size: Option<usize>,
    /// Normal model: "plain" or "transformed".
    pub summaries: Option<String>,
    /// M/G/1: customers per dataset.
    pub customers: Option<usize>,
    pub lower: Option<ScalarOrVec>,
    pub upper: Option<ScalarOrVec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedSection {
    /// Raw data file (normal: one row of reals per observation; M/G/1: one
    /// interdeparture time per line).
    pub file: Option<String>,
    /// Precomputed summary vector.
    pub summary: Option<Vec<f64>>,
    /// Synthetic data: generate one dataset at these parameters.
    pub true_theta: Option<Vec<f64>>,
    /// Seed of the synthetic dataset stream.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub level: Option<f64>,
    pub simultaneous: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasCurveSection {
    /// Reference point for the bias column; defaults to the synthetic
    /// `observed.true_theta`.
    pub reference: Option<Vec<f64>>,
}

/// The raw configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub master_seed: u64,
    pub mode: Option<String>,
    pub n: usize,
    pub k_max: u64,
    pub min_iterations: Option<u64>,
    pub n_start_candidates: usize,
    pub n_starts: usize,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub kde: KdeSection,
    pub model: ModelSection,
    #[serde(default)]
    pub observed: ObservedSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub bias_curve: BiasCurveSection,
}

/// Which built-in model a run uses.
pub enum ModelKind {
    Normal(NormalModel<f64>),
    Mg1(Mg1Model<f64>),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Normal(_) => "normal",
            ModelKind::Mg1(_) => "mg1",
        }
    }

    pub fn parameter_dim(&self) -> usize {
        match self {
            ModelKind::Normal(m) => m.parameter_dim(),
            ModelKind::Mg1(m) => m.parameter_dim(),
        }
    }

    pub fn space(&self) -> &ParameterSpace<f64> {
        match self {
            ModelKind::Normal(m) => m.space(),
            ModelKind::Mg1(m) => m.space(),
        }
    }
}

/// A fully validated run setup.
pub struct ResolvedRun {
    pub config: ConfigFile,
    pub run: RunConfig<f64>,
    pub model: ModelKind,
    pub observed: SummaryVector<f64>,
    pub mode: Mode,
}

/// Loads the config file and applies `--override key=value` pairs.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ConfigFile, AppError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))
        .map_err(AppError::Config)?;
    let mut value: toml::Value = text
        .parse()
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(AppError::Config)?;
    for entry in overrides {
        apply_override(&mut value, entry).map_err(AppError::Config)?;
    }
    let config: ConfigFile = value
        .try_into()
        .context("invalid configuration")
        .map_err(AppError::Config)?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{entry}' is not of the form key=value"))?;
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|t| t["v"].clone())
        .or_else(|_| {
            format!("v = \"{raw}\"")
                .parse::<toml::Table>()
                .map(|t| t["v"].clone())
        })
        .with_context(|| format!("cannot parse override value '{raw}'"))?;
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path '{path}' does not address a table"))?;
        if i + 1 == segments.len() {
            table.insert(segment.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split never yields zero segments")
}

/// Validates the config and builds the model plus observed summaries.
pub fn resolve(config: ConfigFile, config_dir: &Path) -> Result<ResolvedRun, AppError> {
    resolve_inner(config, config_dir).map_err(AppError::Config)
}

fn resolve_inner(mut config: ConfigFile, config_dir: &Path) -> Result<ResolvedRun> {
    let mode = match config.mode.as_deref().unwrap_or("ml") {
        "ml" => Mode::Ml,
        "map" => Mode::Map,
        other => bail!("mode: expected \"ml\" or \"map\", got \"{other}\""),
    };

    // dataset sizes may be pinned by an observed data file
    let observed_data = read_observed_file(&config, config_dir)?;

    let model = build_model(&mut config, observed_data.as_deref())?;
    let p = model.parameter_dim();
    let run = build_run_config(&config, p, mode)?;
    run.validate(p)
        .map_err(|e| anyhow!("invalid run configuration: {e}"))?;

    let observed = build_observed(&config, &model, observed_data.as_deref())?;
    Ok(ResolvedRun {
        config,
        run,
        model,
        observed,
        mode,
    })
}

fn read_observed_file(config: &ConfigFile, config_dir: &Path) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(name) = &config.observed.file else {
        return Ok(None);
    };
    let path = config_dir.join(name);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("observed.file: cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .map(|tok| {
                tok.parse::<f64>()
                    .with_context(|| format!("observed.file line {}: bad number '{tok}'", lineno + 1))
            })
            .collect::<Result<_>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        bail!("observed.file: no data rows in {}", path.display());
    }
    Ok(Some(rows))
}

fn build_model(config: &mut ConfigFile, observed_rows: Option<&[Vec<f64>]>) -> Result<ModelKind> {
    let section = &mut config.model;
    match section.kind.as_str() {
        "normal" => {
            let summaries = match section.summaries.as_deref().unwrap_or("plain") {
                "plain" => NormalSummarySet::Plain,
                "transformed" => NormalSummarySet::Transformed,
                other => bail!(
                    "model.summaries: expected \"plain\" or \"transformed\", got \"{other}\""
                ),
            };
            section.summaries = Some(
                match summaries {
                    NormalSummarySet::Plain => "plain",
                    NormalSummarySet::Transformed => "transformed",
                }
                .to_string(),
            );
            let sample_size = match (section.sample_size, observed_rows) {
                (Some(s), Some(rows)) if s != rows.len() => bail!(
                    "model.sample_size = {s} contradicts observed.file with {} rows",
                    rows.len()
                ),
                (Some(s), _) => s,
                (None, Some(rows)) => rows.len(),
                (None, None) => 1,
            };
            section.sample_size = Some(sample_size);
            let space = match (&section.lower, &section.upper) {
                (None, None) => ParameterSpace::new(vec![-100.0; 10], vec![100.0; 10])
                    .expect("static box"),
                (lower, upper) => {
                    let lo = lower
                        .as_ref()
                        .map(|v| v.resolve(10, "model.lower"))
                        .transpose()?
                        .unwrap_or_else(|| vec![-100.0; 10]);
                    let hi = upper
                        .as_ref()
                        .map(|v| v.resolve(10, "model.upper"))
                        .transpose()?
                        .unwrap_or_else(|| vec![100.0; 10]);
                    ParameterSpace::new(lo, hi).map_err(|e| anyhow!("model box: {e}"))?
                }
            };
            Ok(ModelKind::Normal(
                NormalModel::with_space(space, sample_size, summaries)
                    .map_err(|e| anyhow!("model: {e}"))?,
            ))
        }
        "mg1" => {
            let customers = match (section.customers, observed_rows) {
                (Some(m), Some(rows)) if m != rows.len() => bail!(
                    "model.customers = {m} contradicts observed.file with {} rows",
                    rows.len()
                ),
                (Some(m), _) => m,
                (None, Some(rows)) => rows.len(),
                (None, None) => 100,
            };
            section.customers = Some(customers);
            let space = match (&section.lower, &section.upper) {
                (None, None) => {
                    ParameterSpace::new(vec![0.0, 0.0, 0.05], vec![10.0, 10.0, 10.0])
                        .expect("static box")
                }
                (lower, upper) => {
                    let lo = lower
                        .as_ref()
                        .map(|v| v.resolve(3, "model.lower"))
                        .transpose()?
                        .unwrap_or_else(|| vec![0.0, 0.0, 0.05]);
                    let hi = upper
                        .as_ref()
                        .map(|v| v.resolve(3, "model.upper"))
                        .transpose()?
                        .unwrap_or_else(|| vec![10.0; 3]);
                    ParameterSpace::new(lo, hi).map_err(|e| anyhow!("model box: {e}"))?
                }
            };
            Ok(ModelKind::Mg1(
                Mg1Model::with_space(space, customers).map_err(|e| anyhow!("model: {e}"))?,
            ))
        }
        other => bail!("model.kind: unknown model \"{other}\" (expected \"normal\" or \"mg1\")"),
    }
}

fn build_run_config(config: &ConfigFile, p: usize, mode: Mode) -> Result<RunConfig> {
    let mut tuning = TuningConfig::defaults(p, config.n);
    let t = &config.tuning;
    if let Some(k0) = t.k0 {
        tuning.k0 = k0;
    }
    if let Some(b) = &t.b {
        tuning.b = b.resolve(p, "tuning.b")?;
    }
    if let Some(x) = t.c_fraction {
        tuning.c_fraction = x;
    }
    if let Some(x) = t.f {
        tuning.f = x;
    }
    if let Some(x) = t.n1 {
        tuning.n1 = x;
    }
    if let Some(x) = t.n2 {
        tuning.n2 = x;
    }
    if let Some(x) = t.alpha_trend {
        tuning.alpha_trend = x;
    }
    if let Some(x) = t.alpha_conv {
        tuning.alpha_conv = x;
    }
    if let Some(x) = t.range_span_threshold {
        tuning.range_span_threshold = x;
    }
    if let Some(x) = t.alpha {
        tuning.alpha = x;
    }
    if let Some(x) = t.gamma {
        tuning.gamma = x;
    }

    let mut kde = KdeConfig::default();
    if let Some(w) = config.kde.smoothing_window {
        kde.smoothing_window = w;
    }
    if let Some(z) = config.kde.zero_threshold {
        kde.zero_threshold = z;
    }

    Ok(RunConfig {
        n: config.n,
        k_max: config.k_max,
        min_iterations: config.min_iterations.unwrap_or(0),
        n_start_candidates: config.n_start_candidates,
        n_starts: config.n_starts,
        mode,
        master_seed: config.master_seed,
        tuning,
        kde,
    })
}

fn build_observed(
    config: &ConfigFile,
    model: &ModelKind,
    observed_rows: Option<&[Vec<f64>]>,
) -> Result<SummaryVector<f64>> {
    let section = &config.observed;
    let given = [
        section.file.is_some(),
        section.summary.is_some(),
        section.true_theta.is_some(),
    ]
    .iter()
    .filter(|x| **x)
    .count();
    if given != 1 {
        bail!(
            "observed: give exactly one of `file`, `summary` or `true_theta` (got {given})"
        );
    }

    if let Some(rows) = observed_rows {
        return summarize_rows(model, rows);
    }
    if let Some(summary) = &section.summary {
        let d = match model {
            ModelKind::Normal(m) => m.summary_dim(),
            ModelKind::Mg1(m) => m.summary_dim(),
        };
        if summary.len() != d {
            bail!(
                "observed.summary: expected {d} entries for model \"{}\", got {}",
                model.name(),
                summary.len()
            );
        }
        return SummaryVector::new(summary.clone()).map_err(|e| anyhow!("observed.summary: {e}"));
    }

    let theta = section.true_theta.as_ref().expect("checked above");
    if theta.len() != model.parameter_dim() {
        bail!(
            "observed.true_theta: expected {} entries, got {}",
            model.parameter_dim(),
            theta.len()
        );
    }
    let seed = section
        .seed
        .ok_or_else(|| anyhow!("observed.seed is required with observed.true_theta"))?;
    let mut rng = StreamKey::from_seed(seed).rng();
    match model {
        ModelKind::Normal(m) => {
            let data = m.simulate(theta, &mut rng)?;
            Ok(m.summarize(&data)?)
        }
        ModelKind::Mg1(m) => {
            let data = m.simulate(theta, &mut rng)?;
            Ok(m.summarize(&data)?)
        }
    }
}

fn summarize_rows(model: &ModelKind, rows: &[Vec<f64>]) -> Result<SummaryVector<f64>> {
    match model {
        ModelKind::Normal(m) => {
            let mut flat = Vec::with_capacity(rows.len() * 10);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != 10 {
                    bail!(
                        "observed.file row {}: expected 10 values, got {}",
                        i + 1,
                        row.len()
                    );
                }
                flat.extend_from_slice(row);
            }
            let data = aml::models::Dataset::new(flat, rows.len(), 10)?;
            Ok(m.summarize(&data)?)
        }
        ModelKind::Mg1(m) => {
            let mut flat = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                if row.len() != 1 {
                    bail!(
                        "observed.file row {}: expected one interdeparture time, got {} values",
                        i + 1,
                        row.len()
                    );
                }
                flat.push(row[0]);
            }
            let data = aml::models::Dataset::new(flat, rows.len(), 1)?;
            Ok(m.summarize(&data)?)
        }
    }
}
