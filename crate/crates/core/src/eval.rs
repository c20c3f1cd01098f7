//! ROC/AUC against ground truth, multi-seed trials, hyperparameter sweeps and
//! event detection counts for labeled real-data events.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GlossError, Result};
use crate::graph::{build_all_mode_graphs, BandwidthRule, DEFAULT_NEIGHBORS};
use crate::io::ZoneIndex;
use crate::scalar::Real;
use crate::scoring::{ranking, score_tensor, top_k_count, ScoreMethod, ScoreTensor, DEFAULT_LOF_NEIGHBORS};
use crate::solver::{default_hyperparameters, AdmmSolver, DecompositionResult, SolverConfig, Variant};
use crate::synth::{generate, SyntheticInstance, SyntheticSpec, DAYS, HOURS};
use crate::tensor::{DenseTensor, LabelTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// (false-positive rate, true-positive rate), from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fpr", "tpr"])?;
        for (fpr, tpr) in &self.points {
            out.write_record([fpr.to_string(), tpr.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// ROC curve over every distinct score threshold, with tied scores entering together.
pub fn roc_from_slices(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(GlossError::DimensionMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GlossError::NonFinite("anomaly scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(GlossError::InvalidParameter(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(RocResult {
        points,
        auc: auc / (p * n),
    })
}

pub fn roc_auc<T: Real>(scores: &ScoreTensor<T>, labels: &LabelTensor) -> Result<RocResult> {
    scores.scores.check_same_shape(labels.shape())?;
    let s: Vec<f64> = scores.scores.as_slice().iter().map(|v| v.as_f64()).collect();
    roc_from_slices(&s, labels.as_slice())
}

/// ROC points obtained by flagging the top `k` percent for each `k` in `k_grid`.
pub fn roc_from_top_k<T: Real>(scores: &ScoreTensor<T>, labels: &LabelTensor, k_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    scores.scores.check_same_shape(labels.shape())?;
    let total = labels.len();
    let positives = labels.count_observed();
    let negatives = total - positives;
    if positives == 0 || negatives == 0 {
        return Err(GlossError::InvalidParameter(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }
    let ranked = ranking(&scores.scores);
    let mut cumulative = Vec::with_capacity(total + 1);
    cumulative.push(0usize);
    for &o in &ranked {
        cumulative.push(cumulative.last().unwrap() + labels.as_slice()[o] as usize);
    }
    let mut points = vec![(0.0, 0.0)];
    for &k in k_grid {
        let count = top_k_count(total, k)?;
        let tp = cumulative[count];
        points.push(((count - tp) as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(points)
}

/// Explicit hyperparameter values replacing the data-driven defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperOverrides {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub psi: Option<Vec<f64>>,
    /// Common value of all five penalty parameters.
    pub beta: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl HyperOverrides {
    pub fn apply(&self, config: &mut SolverConfig) {
        if let Some(v) = self.lambda {
            config.lambda = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.theta {
            config.theta = v;
        }
        if let Some(v) = &self.psi {
            config.psi = v.clone();
        }
        if let Some(v) = self.beta {
            config.beta = [v; 5];
        }
        if let Some(v) = self.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = self.tol {
            config.tol = v;
        }
    }
}

/// Everything needed to run generate, solve, score and evaluate for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub variant: Variant,
    pub method: ScoreMethod,
    #[serde(default = "default_lof_neighbors")]
    pub lof_neighbors: usize,
    #[serde(default = "default_graph_neighbors")]
    pub graph_neighbors: usize,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    pub synth: SyntheticSpec,
    #[serde(default)]
    pub overrides: HyperOverrides,
}

fn default_lof_neighbors() -> usize {
    DEFAULT_LOF_NEIGHBORS
}

fn default_graph_neighbors() -> usize {
    DEFAULT_NEIGHBORS
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Gloss,
            method: ScoreMethod::Ee,
            lof_neighbors: DEFAULT_LOF_NEIGHBORS,
            graph_neighbors: DEFAULT_NEIGHBORS,
            bandwidth: BandwidthRule::default(),
            synth: SyntheticSpec::default(),
            overrides: HyperOverrides::default(),
        }
    }
}

impl PipelineSpec {
    /// Solver configuration for `instance`: defaults, variant restrictions, then overrides.
    pub fn solver_config(&self, y: &DenseTensor<f64>, instance_omega: &crate::tensor::SupportSet) -> Result<SolverConfig> {
        let mut config = default_hyperparameters(y, instance_omega, self.variant)?;
        self.overrides.apply(&mut config);
        config.track_objective = false;
        let config = config.with_variant_constraints();
        config.validate(y.order())?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub variant: Variant,
    pub method: ScoreMethod,
    pub c: f64,
    pub missing_percent: f64,
    pub auc: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `||P_obs[L + S - Y]||_F / ||P_obs[Y]||_F`.
    pub feasibility: f64,
    pub sparse_nonzeros: usize,
    pub solve_ms: f64,
}

/// Full output of one trial, for callers that need the decomposition itself.
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub instance: SyntheticInstance,
    pub config: SolverConfig,
    pub decomposition: DecompositionResult<f64>,
    pub scores: ScoreTensor<f64>,
}

pub fn run_trial_detailed(spec: &PipelineSpec, trial: usize, seed: u64) -> Result<TrialOutcome> {
    let wrap = |e: GlossError| GlossError::Trial {
        trial,
        source: Box::new(e),
    };
    let synth = SyntheticSpec {
        seed,
        ..spec.synth.clone()
    };
    let instance = generate(&synth).map_err(wrap)?;
    let config = spec.solver_config(&instance.y, &instance.omega).map_err(wrap)?;
    let start = Instant::now();
    let graphs = if spec.variant.uses_graphs() {
        let observed = instance.y.project(&instance.omega).map_err(wrap)?;
        Some(build_all_mode_graphs(&observed, spec.graph_neighbors, spec.bandwidth).map_err(wrap)?)
    } else {
        None
    };
    let decomposition = AdmmSolver::new(&instance.y, &instance.omega, &config, graphs.as_deref())
        .and_then(|s| s.run())
        .map_err(wrap)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    let scores = score_tensor(&decomposition.sparse, spec.method, spec.lof_neighbors).map_err(wrap)?;
    let roc = roc_auc(&scores, &instance.labels).map_err(wrap)?;
    let diag = &decomposition.diagnostics;
    let record = TrialRecord {
        trial,
        seed,
        variant: spec.variant,
        method: spec.method,
        c: synth.c,
        missing_percent: synth.missing_percent,
        auc: roc.auc,
        iterations: diag.iterations(),
        converged: diag.converged,
        feasibility: diag.last().map_or(f64::NAN, |r| r.feasibility),
        sparse_nonzeros: decomposition.sparse.count_nonzero(),
        solve_ms,
    };
    Ok(TrialOutcome {
        record,
        instance,
        config,
        decomposition,
        scores,
    })
}

pub fn run_trial(spec: &PipelineSpec, trial: usize, seed: u64) -> Result<TrialRecord> {
    run_trial_detailed(spec, trial, seed).map(|o| o.record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean_auc: f64,
    /// Sample standard deviation; zero for a single trial.
    pub std_auc: f64,
    pub records: Vec<TrialRecord>,
}

impl TrialSummary {
    pub fn from_records(records: Vec<TrialRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(GlossError::EmptyInput("no trials".into()));
        }
        let aucs: Vec<f64> = records.iter().map(|r| r.auc).collect();
        let (mean_auc, std_auc) = mean_and_sample_std(&aucs);
        Ok(Self {
            mean_auc,
            std_auc,
            records,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "trial",
            "seed",
            "variant",
            "scorer",
            "c",
            "P",
            "auc",
            "iterations",
            "converged",
            "feasibility",
            "solve_ms",
        ])?;
        for r in &self.records {
            out.write_record([
                r.trial.to_string(),
                r.seed.to_string(),
                r.variant.to_string(),
                r.method.to_string(),
                r.c.to_string(),
                r.missing_percent.to_string(),
                format!("{:.6}", r.auc),
                r.iterations.to_string(),
                r.converged.to_string(),
                format!("{:e}", r.feasibility),
                format!("{:.1}", r.solve_ms),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one trial per seed, concurrently on the current rayon pool.
pub fn run_trials(spec: &PipelineSpec, seeds: &[u64]) -> Result<TrialSummary> {
    if seeds.is_empty() {
        return Err(GlossError::EmptyInput("no trial seeds".into()));
    }
    let records = seeds
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| run_trial(spec, trial, seed))
        .collect::<Result<Vec<_>>>()?;
    TrialSummary::from_records(records)
}

/// Hyperparameters that a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyper {
    Lambda,
    Gamma,
    Theta,
    Beta,
    /// Weight of one mode in the nuclear norm (zero-based mode).
    Psi(usize),
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::Lambda => f.write_str("lambda"),
            Hyper::Gamma => f.write_str("gamma"),
            Hyper::Theta => f.write_str("theta"),
            Hyper::Beta => f.write_str("beta"),
            Hyper::Psi(n) => write!(f, "psi{n}"),
        }
    }
}

impl FromStr for Hyper {
    type Err = GlossError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "lambda" => Ok(Hyper::Lambda),
            "gamma" => Ok(Hyper::Gamma),
            "theta" => Ok(Hyper::Theta),
            "beta" => Ok(Hyper::Beta),
            _ => lower
                .strip_prefix("psi")
                .and_then(|n| n.parse().ok())
                .map(Hyper::Psi)
                .ok_or_else(|| GlossError::InvalidParameter(format!("unknown hyperparameter `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub param: Hyper,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub rows: SweepAxis,
    pub cols: SweepAxis,
    /// `cells[i][j]` belongs to `rows.values[i]` and `cols.values[j]`.
    pub cells: Vec<Vec<TrialSummary>>,
}

impl SweepGrid {
    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|row| row.iter().map(|c| c.mean_auc).collect()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            self.rows.param.to_string(),
            self.cols.param.to_string(),
            "mean_auc".into(),
            "std_auc".into(),
            "trials".into(),
        ])?;
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                out.write_record([
                    self.rows.values[i].to_string(),
                    self.cols.values[j].to_string(),
                    format!("{:.6}", cell.mean_auc),
                    format!("{:.6}", cell.std_auc),
                    cell.records.len().to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn set_hyper(overrides: &mut HyperOverrides, param: Hyper, value: f64, order: usize) -> Result<()> {
    match param {
        Hyper::Lambda => overrides.lambda = Some(value),
        Hyper::Gamma => overrides.gamma = Some(value),
        Hyper::Theta => overrides.theta = Some(value),
        Hyper::Beta => overrides.beta = Some(value),
        Hyper::Psi(n) => {
            if n >= order {
                return Err(GlossError::ModeOutOfRange { mode: n, order });
            }
            let psi = overrides.psi.get_or_insert_with(|| vec![1.0; order]);
            psi[n] = value;
        }
    }
    Ok(())
}

/// Mean AUC over `seeds` at every point of a two-parameter grid.
///
/// Mode weights that are not swept keep their override (or 1 when a single
/// mode weight is swept without an explicit full vector).
pub fn sweep(spec: &PipelineSpec, rows: &SweepAxis, cols: &SweepAxis, seeds: &[u64]) -> Result<SweepGrid> {
    if rows.values.is_empty() || cols.values.is_empty() {
        return Err(GlossError::EmptyInput("sweep grid has no points".into()));
    }
    if rows.param == cols.param {
        return Err(GlossError::InvalidParameter(format!(
            "sweep axes must differ, both are {}",
            rows.param
        )));
    }
    let order = 4;
    let mut cells = Vec::with_capacity(rows.values.len());
    for &rv in &rows.values {
        let mut row = Vec::with_capacity(cols.values.len());
        for &cv in &cols.values {
            let mut point = spec.clone();
            set_hyper(&mut point.overrides, rows.param, rv, order)?;
            set_hyper(&mut point.overrides, cols.param, cv, order)?;
            row.push(run_trials(&point, seeds)?);
        }
        cells.push(row);
    }
    Ok(SweepGrid {
        rows: rows.clone(),
        cols: cols.clone(),
        cells,
    })
}

/// One labeled real-world event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub zone_id: String,
    pub date: NaiveDate,
    /// First hour of the event, 0..24.
    pub start_hour: u32,
    /// Last hour of the event (inclusive), 0..24.
    pub end_hour: u32,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub events: Vec<Event>,
}

/// Maps (day, week) indices to dates; day 0 of week 0 is `epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub epoch: NaiveDate,
    pub weeks: usize,
}

impl Calendar {
    pub fn new(epoch: NaiveDate, weeks: usize) -> Self {
        Self { epoch, weeks }
    }

    /// Zero-based (day-of-week, week) of `date`, or `None` outside the covered weeks.
    pub fn locate(&self, date: NaiveDate) -> Option<(usize, usize)> {
        let days = (date - self.epoch).num_days();
        if days < 0 {
            return None;
        }
        let days = days as usize;
        let week = days / DAYS;
        (week < self.weeks).then_some((days % DAYS, week))
    }

    pub fn date(&self, day: usize, week: usize) -> NaiveDate {
        self.epoch + chrono::Duration::days((week * DAYS + day) as i64)
    }

    pub fn weekday_of_first_day(&self) -> chrono::Weekday {
        self.epoch.weekday()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub k_percent: f64,
    pub detected: usize,
    pub total: usize,
}

/// Number of events with at least one flagged cell, for each top-K level.
pub fn event_detection<T: Real>(
    scores: &ScoreTensor<T>,
    events: &EventList,
    k_grid: &[f64],
    calendar: &Calendar,
    zones: &ZoneIndex,
) -> Result<Vec<DetectionRow>> {
    let shape = scores.scores.shape();
    if shape.len() != 4 || shape[0] != HOURS || shape[1] != DAYS || shape[2] != calendar.weeks || shape[3] != zones.len() {
        return Err(GlossError::ShapeMismatch {
            expected: vec![HOURS, DAYS, calendar.weeks, zones.len()],
            found: shape.to_vec(),
        });
    }
    let mut cells_per_event = Vec::with_capacity(events.events.len());
    for e in &events.events {
        let zone = zones
            .position(&e.zone_id)
            .ok_or_else(|| GlossError::InvalidParameter(format!("event `{}` references unknown zone `{}`", e.name, e.zone_id)))?;
        let (day, week) = calendar
            .locate(e.date)
            .ok_or_else(|| GlossError::InvalidParameter(format!("event `{}` date {} is outside the tensor", e.name, e.date)))?;
        if e.start_hour > e.end_hour || e.end_hour as usize >= HOURS {
            return Err(GlossError::InvalidParameter(format!(
                "event `{}` has invalid hour range {}..={}",
                e.name, e.start_hour, e.end_hour
            )));
        }
        cells_per_event.push(
            (e.start_hour..=e.end_hour)
                .map(|h| scores.scores.offset(&[h as usize, day, week, zone]))
                .collect::<Vec<_>>(),
        );
    }
    let ranked = ranking(&scores.scores);
    let mut rank_of = vec![0usize; ranked.len()];
    for (r, &o) in ranked.iter().enumerate() {
        rank_of[o] = r;
    }
    let best_rank: Vec<usize> = cells_per_event
        .iter()
        .map(|cells| cells.iter().map(|&o| rank_of[o]).min().expect("nonempty hour range"))
        .collect();
    k_grid
        .iter()
        .map(|&k| {
            let count = top_k_count(ranked.len(), k)?;
            Ok(DetectionRow {
                k_percent: k,
                detected: best_rank.iter().filter(|&&r| r < count).count(),
                total: best_rank.len(),
            })
        })
        .collect()
}
