use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use gloss::eval::{event_detection, roc_from_slices, run_trials, Calendar};
use gloss::io::{self, IngestConfig, RowErrorPolicy, TensorMeta, ZoneIndex};
use gloss::solver::{Diagnostics, IterationRecord};
use gloss::{
    build_all_mode_graphs, default_hyperparameters, score_tensor, AdmmSolver, BandwidthRule, GlossError, Real,
    SolverConfig, SupportSet, Tensor, Variant,
};
use log::{info, warn};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::options::*;
use crate::output::OutputDir;

const Y_FILE: &str = "y.gltn";
const OMEGA_FILE: &str = "omega.glmk";
const LABELS_FILE: &str = "labels.glmk";
const LOW_RANK_FILE: &str = "low_rank.gltn";
const SPARSE_FILE: &str = "sparse.gltn";
const SCORES_FILE: &str = "scores.gltn";

fn out_dir(out: Option<&Path>) -> CliResult<OutputDir> {
    let path = out.ok_or_else(|| CliError::args("missing required option --out (or GLOSS_OUT)"))?;
    OutputDir::create(path)
}

/// `path` itself, or `path/name` when `path` is a directory.
fn file_in(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn load_tensor(path: &Path) -> CliResult<(Tensor, TensorMeta)> {
    io::load_tensor(path).map_err(|e| CliError::reading(path, e))
}

fn load_mask(path: &Path) -> CliResult<SupportSet> {
    io::load_mask(path).map(|(m, _)| m).map_err(|e| CliError::reading(path, e))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::reading(path, e.into()))
}

fn workers_pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(CliError::args("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::new(crate::error::Category::Other, e.to_string()))
}

fn seeds(first: u64, count: usize) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err(CliError::args("--trials must be at least 1"));
    }
    Ok((0..count as u64).map(|i| first + i).collect())
}

pub fn ingest(flags: &IngestOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    let trips = required(&o.trips, "trips")?;
    let zones_path = required(&o.zones, "zones")?;
    let epoch = required(&o.epoch, "epoch")?;
    let mut dir = out_dir(out)?;

    let zones = ZoneIndex::read(BufReader::new(open(&zones_path)?)).map_err(|e| CliError::reading(&zones_path, e))?;
    let mut cfg = IngestConfig::new(epoch);
    if let Some(w) = o.weeks {
        cfg.weeks = w;
    }
    if let Some(f) = &o.timestamp_format {
        cfg.timestamp_format = f.clone();
    }
    if let Some(c) = &o.timestamp_column {
        cfg.timestamp_column = c.clone();
    }
    if let Some(c) = &o.zone_column {
        cfg.zone_column = c.clone();
    }
    cfg.on_error = match o.on_error.unwrap_or(ErrorPolicy::Fail) {
        ErrorPolicy::Fail => RowErrorPolicy::Fail,
        ErrorPolicy::Skip => RowErrorPolicy::Skip,
    };
    let ingested = io::ingest(open(&trips)?, &zones, &cfg).map_err(|e| CliError::reading(&trips, e))?;
    let r = &ingested.report;
    info!(
        "accepted {} records; skipped {} out of range, {} unknown zone, {} malformed",
        r.accepted,
        r.out_of_range,
        r.unknown_zone,
        r.malformed.len()
    );

    dir.record_input(&trips)?;
    dir.record_input(&zones_path)?;
    let meta = TensorMeta {
        zones: Some(zones.ids().to_vec()),
        ..TensorMeta::standard("counts")
    };
    dir.write_tensor(Y_FILE, &ingested.tensor, &meta)?;
    dir.write_mask(OMEGA_FILE, &ingested.omega, &TensorMeta::standard("observed"))?;
    dir.write("zones.txt", |w| {
        for id in zones.ids() {
            writeln!(w, "{id}")?;
        }
        Ok(())
    })?;
    dir.write_json("report.json", r)?;
    dir.write_json("stats.json", &io::dataset_stats(&ingested.tensor))?;
    dir.finish("ingest", &(&o, &cfg))
}

pub fn synth(flags: &SynthOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    let spec = o.synth.spec(o.seed.unwrap_or(0))?;
    let mut dir = out_dir(out)?;
    if let Some(base) = &o.synth.base {
        dir.record_input(base)?;
    }
    let inst = gloss::generate(&spec)?;
    info!(
        "generated {:?} with {} labeled entries",
        inst.y.shape(),
        inst.labels.count_observed()
    );
    let meta = TensorMeta {
        provenance: serde_json::to_value(&inst.provenance)?,
        ..TensorMeta::standard("synthetic")
    };
    dir.write_tensor(Y_FILE, &inst.y, &meta)?;
    dir.write_mask(OMEGA_FILE, &inst.omega, &TensorMeta::standard("observed"))?;
    dir.write_mask(LABELS_FILE, &inst.labels, &TensorMeta::standard("labels"))?;
    dir.write_json("events.json", &inst.provenance.events)?;
    dir.finish("synth", &(&o, &spec))
}

#[derive(Serialize)]
struct DecomposeRecord<'a> {
    options: &'a DecomposeOptions,
    solver: &'a SolverConfig,
    default_hyperparameters: bool,
}

struct Decomposed {
    low_rank: Tensor,
    sparse: Tensor,
    diagnostics: Diagnostics,
    graphs: Vec<gloss::Graph>,
}

fn run_solver<T: Real>(
    y: &Tensor,
    omega: &SupportSet,
    config: &SolverConfig,
    neighbors: usize,
    bandwidth: BandwidthRule,
    mut observer: impl FnMut(&IterationRecord),
) -> gloss::Result<Decomposed> {
    let y_t = y.cast::<T>();
    let graphs = if config.variant.uses_graphs() {
        Some(build_all_mode_graphs(&y_t.project(omega)?, neighbors, bandwidth)?)
    } else {
        None
    };
    let res = AdmmSolver::new(&y_t, omega, config, graphs.as_deref())?.run_with(&mut observer)?;
    let graphs = graphs
        .unwrap_or_default()
        .into_iter()
        .map(|g| {
            let adjacency = g.adjacency.map(|v| v.as_f64());
            gloss::Graph::from_adjacency(g.mode, adjacency, g.bandwidth.as_f64())
        })
        .collect::<gloss::Result<Vec<_>>>()?;
    Ok(Decomposed {
        low_rank: res.low_rank.cast(),
        sparse: res.sparse.cast(),
        diagnostics: res.diagnostics,
        graphs,
    })
}

fn solver_config(y: &Tensor, omega: &SupportSet, variant: Variant, hyper: &HyperArgs) -> CliResult<(SolverConfig, bool)> {
    let (mut cfg, defaulted) = match default_hyperparameters(y, omega, variant) {
        Ok(cfg) => (cfg, true),
        Err(GlossError::InvalidParameter(reason)) => {
            warn!("data-driven defaults unavailable ({reason}); using unit weights");
            (SolverConfig::new(variant, y.order()), false)
        }
        Err(e) => return Err(e.into()),
    };
    hyper.overrides().apply(&mut cfg);
    let cfg = cfg.with_variant_constraints();
    cfg.validate(y.order()).map_err(|e| CliError::args(e.to_string()))?;
    Ok((cfg, defaulted))
}

pub fn decompose(flags: &DecomposeOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    let input = required(&o.input, "input")?;
    let mut dir = out_dir(out)?;
    let y_path = file_in(&input, Y_FILE);
    let (y, meta) = load_tensor(&y_path)?;
    dir.record_input(&y_path)?;
    let omega_path = input.join(OMEGA_FILE);
    let omega = if input.is_dir() && omega_path.exists() {
        dir.record_input(&omega_path)?;
        load_mask(&omega_path)?
    } else {
        SupportSet::full(y.shape())?
    };
    if omega.shape() != y.shape() {
        return Err(CliError::schema(format!(
            "mask shape {:?} does not match tensor shape {:?}",
            omega.shape(),
            y.shape()
        )));
    }
    let variant = o.variant.unwrap_or(Variant::Gloss);
    let (cfg, defaulted) = solver_config(&y, &omega, variant, &o.hyper)?;
    info!("{variant}: lambda={:e} gamma={:e} theta={:.4} psi={:?} beta={:.4}", cfg.lambda, cfg.gamma, cfg.theta, cfg.psi, cfg.beta[0]);

    let mut progress: Option<Box<dyn Write>> = match &o.progress {
        None => None,
        Some(p) if p.as_os_str() == "-" => Some(Box::new(std::io::stdout())),
        Some(p) => Some(Box::new(std::io::BufWriter::new(File::create(p)?))),
    };
    let mut progress_error = None;
    let observer = |rec: &IterationRecord| {
        if let Some(w) = progress.as_mut() {
            let line = serde_json::to_string(rec).expect("records serialize");
            if let Err(e) = writeln!(w, "{line}") {
                progress_error.get_or_insert(e);
            }
        }
    };
    let neighbors = o.graph_neighbors.unwrap_or(gloss::graph::DEFAULT_NEIGHBORS);
    let bandwidth = bandwidth_rule(o.bandwidth);
    let result = match o.precision.unwrap_or(Precision::F64) {
        Precision::F64 => run_solver::<f64>(&y, &omega, &cfg, neighbors, bandwidth, observer),
        Precision::F32 => run_solver::<f32>(&y, &omega, &cfg, neighbors, bandwidth, observer),
    }?;
    if let Some(w) = progress.as_mut() {
        w.flush()?;
    }
    if let Some(e) = progress_error {
        return Err(e.into());
    }
    let diag = &result.diagnostics;
    info!(
        "{} iterations, converged: {}, final feasibility {:.3e}",
        diag.iterations(),
        diag.converged,
        diag.last().map_or(f64::NAN, |r| r.feasibility)
    );

    let carry = |kind: &str| TensorMeta {
        zones: meta.zones.clone(),
        ..TensorMeta::standard(kind)
    };
    dir.write_tensor(LOW_RANK_FILE, &result.low_rank, &carry("low_rank"))?;
    dir.write_tensor(SPARSE_FILE, &result.sparse, &carry("sparse"))?;
    dir.write_mask(OMEGA_FILE, &omega, &TensorMeta::standard("observed"))?;
    dir.write("config.json", |w| Ok(w.write_all(cfg.to_json()?.as_bytes())?))?;
    dir.write("diagnostics.csv", |w| Ok(diag.write_csv(w)?))?;
    for g in &result.graphs {
        dir.write(&format!("graph_mode{}.txt", g.mode), |w| Ok(g.write_triplets(w)?))?;
    }
    let record = DecomposeRecord {
        options: &o,
        solver: &cfg,
        default_hyperparameters: defaulted,
    };
    dir.finish("decompose", &record)
}

pub fn score(flags: &ScoreOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    let input = required(&o.input, "input")?;
    let mut dir = out_dir(out)?;
    let path = file_in(&input, SPARSE_FILE);
    let (s, meta) = load_tensor(&path)?;
    dir.record_input(&path)?;
    let method = o.method.unwrap_or(gloss::ScoreMethod::Ee);
    let k = o.lof_neighbors.unwrap_or(gloss::scoring::DEFAULT_LOF_NEIGHBORS);
    let scores = score_tensor(&s, method, k)?;
    let meta = TensorMeta {
        zones: meta.zones,
        method: Some(method.to_string()),
        units: "score".into(),
        ..TensorMeta::standard("scores")
    };
    dir.write_tensor(SCORES_FILE, &scores.scores, &meta)?;
    dir.finish("score", &o)
}

#[derive(Serialize)]
struct Metrics {
    auc: f64,
    positives: usize,
    negatives: usize,
}

pub fn eval(flags: &EvalOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    match (&o.scores, o.trials) {
        (Some(_), Some(_)) => Err(CliError::args("--scores and --trials are mutually exclusive")),
        (None, None) => Err(CliError::args("give --scores (with --labels or --events) or --trials")),
        (Some(scores), None) => eval_files(&o, scores, out),
        (None, Some(trials)) => eval_trials(&o, trials, out),
    }
}

fn eval_files(o: &EvalOptions, scores_arg: &Path, out: Option<&Path>) -> CliResult<()> {
    if o.labels.is_none() && o.events.is_none() {
        return Err(CliError::args("--scores needs --labels, --events, or both"));
    }
    let mut dir = out_dir(out)?;
    let scores_path = file_in(scores_arg, SCORES_FILE);
    let (scores, meta) = load_tensor(&scores_path)?;
    dir.record_input(&scores_path)?;
    let method = meta
        .method
        .as_deref()
        .and_then(|m| m.parse().ok())
        .unwrap_or(gloss::ScoreMethod::Ee);
    let scores = gloss::ScoreTensor { scores, method };

    if let Some(labels_arg) = &o.labels {
        let labels_path = file_in(labels_arg, LABELS_FILE);
        let labels = load_mask(&labels_path)?;
        dir.record_input(&labels_path)?;
        if labels.shape() != scores.scores.shape() {
            return Err(CliError::schema(format!(
                "label shape {:?} does not match score shape {:?}",
                labels.shape(),
                scores.scores.shape()
            )));
        }
        let s: Vec<f64> = scores.scores.as_slice().to_vec();
        let roc = roc_from_slices(&s, labels.as_slice())?;
        let positives = labels.count_observed();
        dir.write("roc.csv", |w| Ok(roc.write_csv(w)?))?;
        dir.write_json(
            "metrics.json",
            &Metrics {
                auc: roc.auc,
                positives,
                negatives: labels.len() - positives,
            },
        )?;
        println!("{:.6}", roc.auc);
    }

    if let Some(events_path) = &o.events {
        let zones_path = required(&o.zone_index, "zone-index")?;
        let epoch = required(&o.epoch, "epoch")?;
        let k_grid = required(&o.k_grid, "k-grid")?;
        let events = io::read_events(open(events_path)?).map_err(|e| CliError::reading(events_path, e))?;
        let zones = ZoneIndex::read(BufReader::new(open(&zones_path)?)).map_err(|e| CliError::reading(&zones_path, e))?;
        dir.record_input(events_path)?;
        dir.record_input(&zones_path)?;
        let shape = scores.scores.shape();
        if shape.len() != 4 {
            return Err(CliError::schema(format!("event detection needs a 4-mode score tensor, got {shape:?}")));
        }
        let calendar = Calendar::new(epoch, shape[2]);
        let rows = event_detection(&scores, &events, &k_grid, &calendar, &zones)?;
        dir.write("detection.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["k_percent", "detected", "total"]).map_err(GlossError::from)?;
            for r in &rows {
                csv.write_record([r.k_percent.to_string(), r.detected.to_string(), r.total.to_string()])
                    .map_err(GlossError::from)?;
            }
            csv.flush()?;
            Ok(())
        })?;
        for r in &rows {
            println!("top {}%: {}/{} events", r.k_percent, r.detected, r.total);
        }
    }
    dir.finish("eval", o)
}

fn eval_trials(o: &EvalOptions, trials: usize, out: Option<&Path>) -> CliResult<()> {
    let spec = o.pipeline.spec()?;
    let seeds = seeds(o.seed.unwrap_or(0), trials)?;
    let mut dir = out_dir(out)?;
    if let Some(base) = &o.pipeline.synth.base {
        dir.record_input(base)?;
    }
    let pool = workers_pool(o.workers)?;
    let summary = pool.install(|| run_trials(&spec, &seeds))?;
    dir.write("trials.csv", |w| Ok(summary.write_csv(w)?))?;
    dir.write_json("summary.json", &summary)?;
    println!("{:.6} +/- {:.6}", summary.mean_auc, summary.std_auc);
    dir.finish("eval", &(o, &spec))
}

pub fn sweep(flags: &SweepOptions, config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let o = resolve(flags, config)?;
    let rows = parse_axis(&required(&o.rows, "rows")?)?;
    let cols = parse_axis(&required(&o.cols, "cols")?)?;
    let seeds = seeds(o.seed.unwrap_or(0), required(&o.trials, "trials")?)?;
    let spec = o.pipeline.spec()?;
    let mut dir = out_dir(out)?;
    if let Some(base) = &o.pipeline.synth.base {
        dir.record_input(base)?;
    }
    let pool = workers_pool(o.workers)?;
    let grid = pool.install(|| gloss::eval::sweep(&spec, &rows, &cols, &seeds))?;
    dir.write("grid.csv", |w| Ok(grid.write_csv(w)?))?;
    dir.write_json("grid.json", &grid)?;
    for (i, row) in grid.mean_matrix().iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        println!("{}={}: {}", rows.param, rows.values[i], cells.join(" "));
    }
    dir.finish("sweep", &(&o, &spec))
}
