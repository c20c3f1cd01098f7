use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, ValueEnum};
use gloss::eval::HyperOverrides;
use gloss::synth::{BaseProfile, SyntheticSpec, DEFAULT_PROFILE_SEED};
use gloss::{BandwidthRule, PipelineSpec, ScoreMethod, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Merges a JSON config file under the command-line flags.
///
/// Keys are the long flag names with `_` for `-`. A key that no flag accepts
/// is a schema violation; a flag given on the command line wins.
pub fn resolve<A>(flags: &A, config: Option<&Path>) -> CliResult<A>
where
    A: Serialize + DeserializeOwned + Default,
{
    let Some(path) = config else {
        return Ok(clone_via_json(flags)?);
    };
    let file = File::open(path).map_err(|e| CliError::reading(path, e.into()))?;
    let from_file: Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::schema(format!("{}: {e}", path.display())))?;
    let Value::Object(mut merged) = from_file else {
        return Err(CliError::schema(format!("{}: config must be a JSON object", path.display())));
    };
    let Value::Object(known) = serde_json::to_value(A::default())? else {
        unreachable!("option structs serialize to objects");
    };
    if let Some(key) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::schema(format!("{}: unknown key `{key}`", path.display())));
    }
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("option structs serialize to objects");
    };
    overlay(&mut merged, given);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::schema(format!("{}: {e}", path.display())))
}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
}

fn clone_via_json<A: Serialize + DeserializeOwned>(a: &A) -> serde_json::Result<A> {
    serde_json::from_value(serde_json::to_value(a)?)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: gloss::GlossError| e.to_string())
}

fn parse_method(s: &str) -> Result<ScoreMethod, String> {
    s.parse().map_err(|e: gloss::GlossError| e.to_string())
}

/// Solver hyperparameters; unset values come from the data-driven defaults.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct HyperArgs {
    /// Sparsity weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Temporal smoothness weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Graph regularization weight.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Nuclear norm weight per mode, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub psi: Option<Vec<f64>>,
    /// Common value of the five penalty parameters.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl HyperArgs {
    pub fn overrides(&self) -> HyperOverrides {
        HyperOverrides {
            lambda: self.lambda,
            gamma: self.gamma,
            theta: self.theta,
            psi: self.psi.clone(),
            beta: self.beta,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

/// Synthetic benchmark parameters.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Anomaly amplitude.
    #[arg(long)]
    pub c: Option<f64>,
    /// Number of injected intervals.
    #[arg(long)]
    pub n_events: Option<usize>,
    /// Length of each interval in hours.
    #[arg(long)]
    pub duration: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Percentage of hour fibers removed.
    #[arg(long)]
    pub missing_percent: Option<f64>,
    #[arg(long)]
    pub zones: Option<usize>,
    #[arg(long)]
    pub weeks: Option<usize>,
    /// Seed of the built-in weekly profile.
    #[arg(long)]
    pub profile_seed: Option<u64>,
    /// 24 x 7 x Z tensor file replacing the built-in weekly profile.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Clip negative values to zero.
    #[arg(long)]
    pub clip_negative: Option<bool>,
}

impl SynthArgs {
    pub fn spec(&self, seed: u64) -> CliResult<SyntheticSpec> {
        let d = SyntheticSpec::default();
        let base = match &self.base {
            Some(path) => {
                if self.zones.is_some() || self.profile_seed.is_some() {
                    return Err(CliError::args("--base excludes --zones and --profile-seed"));
                }
                let (t, _) = gloss::io::load_tensor::<f64>(path).map_err(|e| CliError::reading(path, e))?;
                BaseProfile::custom(t).map_err(|e| CliError::reading(path, e))?
            }
            None => BaseProfile::Builtin {
                zones: self.zones.unwrap_or(d.base.zones()),
                seed: self.profile_seed.unwrap_or(DEFAULT_PROFILE_SEED),
            },
        };
        let spec = SyntheticSpec {
            base,
            weeks: self.weeks.unwrap_or(d.weeks),
            c: self.c.unwrap_or(d.c),
            n_events: self.n_events.unwrap_or(d.n_events),
            duration: self.duration.unwrap_or(d.duration),
            noise_var: self.noise_var.unwrap_or(d.noise_var),
            missing_percent: self.missing_percent.unwrap_or(d.missing_percent),
            clip_negative: self.clip_negative.unwrap_or(d.clip_negative),
            seed,
        };
        spec.validate().map_err(|e| CliError::args(e.to_string()))?;
        Ok(spec)
    }
}

/// Generate, decompose, score and evaluate settings shared by `eval` and `sweep`.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct PipelineArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Fiber scorer: EE or LOF.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<ScoreMethod>,
    #[arg(long)]
    pub lof_neighbors: Option<usize>,
    #[arg(long)]
    pub graph_neighbors: Option<usize>,
    /// Fixed Gaussian kernel bandwidth; median k-th neighbor distance when unset.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
}

impl PipelineArgs {
    pub fn spec(&self) -> CliResult<PipelineSpec> {
        let d = PipelineSpec::default();
        Ok(PipelineSpec {
            variant: self.variant.unwrap_or(d.variant),
            method: self.method.unwrap_or(d.method),
            lof_neighbors: self.lof_neighbors.unwrap_or(d.lof_neighbors),
            graph_neighbors: self.graph_neighbors.unwrap_or(d.graph_neighbors),
            bandwidth: bandwidth_rule(self.bandwidth),
            synth: self.synth.spec(0)?,
            overrides: self.hyper.overrides(),
        })
    }
}

pub fn bandwidth_rule(fixed: Option<f64>) -> BandwidthRule {
    fixed.map_or(BandwidthRule::MedianKthNeighbor, BandwidthRule::Fixed)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Trip CSV with a header row.
    #[arg(long)]
    pub trips: Option<PathBuf>,
    /// Zone whitelist, one id per line.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    /// Date of day 1 of week 1 (YYYY-MM-DD).
    #[arg(long)]
    pub epoch: Option<NaiveDate>,
    #[arg(long)]
    pub weeks: Option<usize>,
    /// chrono format string of the timestamp column.
    #[arg(long)]
    pub timestamp_format: Option<String>,
    #[arg(long)]
    pub timestamp_column: Option<String>,
    #[arg(long)]
    pub zone_column: Option<String>,
    /// What to do with unparseable rows.
    #[arg(long, value_enum)]
    pub on_error: Option<ErrorPolicy>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    Fail,
    Skip,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SynthOptions {
    #[command(flatten)]
    #[serde(flatten)]
    pub synth: SynthArgs,
    /// Seed of the event placement and noise.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Directory holding `y.gltn` and optionally `omega.glmk`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub graph_neighbors: Option<usize>,
    /// Fixed Gaussian kernel bandwidth; median k-th neighbor distance when unset.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Working precision of the solver.
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Write one JSON line per iteration to this file (`-` for standard output).
    #[arg(long)]
    pub progress: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Directory holding `sparse.gltn`, or a tensor file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fiber scorer: EE or LOF.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<ScoreMethod>,
    #[arg(long)]
    pub lof_neighbors: Option<usize>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Directory holding `scores.gltn`, or a tensor file.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Directory holding `labels.glmk`, or a mask file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Events CSV (zone_id, date, start_hour, end_hour, name) for top-K detection counts.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Zone whitelist matching the score tensor's last mode.
    #[arg(long)]
    pub zone_index: Option<PathBuf>,
    /// Date of day 1 of week 1 (YYYY-MM-DD).
    #[arg(long)]
    pub epoch: Option<NaiveDate>,
    /// Top-K percentages, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    /// Run this many synthetic trials instead of evaluating files.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Seed of the first trial; trial `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for concurrent trials.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Row axis as `name=v1,v2,...` (lambda, gamma, theta, beta or psiN).
    #[arg(long)]
    pub rows: Option<String>,
    /// Column axis, same syntax as `--rows`.
    #[arg(long)]
    pub cols: Option<String>,
    /// Trials per grid point.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
}

pub fn parse_axis(s: &str) -> CliResult<gloss::eval::SweepAxis> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| CliError::args(format!("axis `{s}` must look like name=v1,v2")))?;
    let param = name.trim().parse().map_err(|e: gloss::GlossError| CliError::args(e.to_string()))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| CliError::args(format!("axis value `{v}`: {e}"))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(gloss::eval::SweepAxis { param, values })
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::args(format!("missing required option --{flag}")))
}
