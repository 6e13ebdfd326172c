//! Multistart experiments: many inGRAPE runs from random starting points,
//! histograms of the final values, clustering of those values, and sweeps
//! over the decoherence strength ε.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::gradients::GradOptions;
use crate::objectives::ObjectiveKind;
use crate::optimize::{ingrape_run, GrapeParams, RunRecord};
use crate::propagator::csv::read_controls;
use crate::propagator::{ControlGrid, ControlVector, ParamVector};
use crate::qmodel::{build_generators, GateKind, GateTarget, SystemSpec};
use crate::{Error, Result};

/// How starting points are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every component of `g` uniform on `[0, 1]`.
    UniformUnitCube,
    /// `u` uniform on `[−1, 1]`, `w` uniform on `[0, 1]`.
    Symmetric,
    PaperGuess,
    /// Controls CSV; `w = √n`.
    File(PathBuf),
}

/// `3K` uniform draws on `[0, 1)` from the stream `(master_seed, run_index)`,
/// laid out as `[u, w₁, w₂]`.
pub fn sample_initial(master_seed: u64, run_index: u64, intervals: usize) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run_index);
    let flat: Vec<f64> = (0..3 * intervals).map(|_| rng.random::<f64>()).collect();
    ParamVector::from_flat(&flat)
}

pub fn initial_params(scheme: &InitScheme, master_seed: u64, run_index: u64, grid: &ControlGrid) -> Result<ParamVector> {
    match scheme {
        InitScheme::UniformUnitCube => Ok(sample_initial(master_seed, run_index, grid.intervals)),
        InitScheme::Symmetric => {
            let mut g = sample_initial(master_seed, run_index, grid.intervals);
            g.u.iter_mut().for_each(|u| *u = 2.0 * *u - 1.0);
            Ok(g)
        }
        InitScheme::PaperGuess => Ok(ParamVector::paper_guess(grid)),
        InitScheme::File(path) => {
            let table = read_controls(path)?;
            table.check_grid(grid)?;
            Ok(ParamVector::from_controls(&table.controls))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    Fixed(usize),
    FreedmanDiaconis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], binning: Binning) -> Result<Histogram> {
    if values.is_empty() {
        return Ok(Histogram { edges: vec![], counts: vec![] });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("histogram values must be finite".into()));
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let bins = match binning {
        Binning::Fixed(0) => return Err(Error::InvalidParameter("bin count must be at least 1".into())),
        Binning::Fixed(n) => n,
        Binning::FreedmanDiaconis => {
            let mut data = Data::new(values.to_vec());
            let iqr = data.upper_quartile() - data.lower_quartile();
            let width = 2.0 * iqr / (values.len() as f64).cbrt();
            if width > 0.0 {
                (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
            } else {
                ((values.len() as f64).sqrt().ceil() as usize).max(1)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Run indices in this cluster.
    pub members: Vec<usize>,
    pub value_center: f64,
    pub value_min: f64,
    pub value_max: f64,
    /// Mean control vector `f` over the members.
    pub centroid: ControlVector,
    /// Root-mean-square distance of member controls from the centroid.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    /// Euclidean distances between cluster centroids.
    pub centroid_distances: Vec<Vec<f64>>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Splits the sorted final values at every gap wider than
/// `gap_threshold × (max − min)`. `points` holds `(run index, value, controls)`.
pub fn detect_clusters(points: &[(usize, f64, &ControlVector)], gap_threshold: f64) -> Clustering {
    if points.is_empty() {
        return Clustering { clusters: vec![], centroid_distances: vec![] };
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(points[a].0.cmp(&points[b].0)));
    let lo = points[order[0]].1;
    let hi = points[*order.last().unwrap()].1;
    let cut = gap_threshold * (hi - lo);
    let mut groups: Vec<Vec<usize>> = vec![vec![order[0]]];
    for w in order.windows(2) {
        if hi > lo && points[w[1]].1 - points[w[0]].1 > cut {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(w[1]);
    }
    let clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|group| {
            let flats: Vec<Vec<f64>> = group.iter().map(|&i| points[i].2.to_flat()).collect();
            let n = flats.len() as f64;
            let mut mean = vec![0.0; flats[0].len()];
            for f in &flats {
                for (m, v) in mean.iter_mut().zip(f) {
                    *m += v / n;
                }
            }
            let spread = (flats.iter().map(|f| distance(f, &mean).powi(2)).sum::<f64>() / n).sqrt();
            let values: Vec<f64> = group.iter().map(|&i| points[i].1).collect();
            let mut members: Vec<usize> = group.iter().map(|&i| points[i].0).collect();
            members.sort_unstable();
            Cluster {
                members,
                value_center: values.iter().mean(),
                value_min: values.iter().copied().fold(f64::INFINITY, f64::min),
                value_max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                centroid: ControlVector::from_flat(&mean),
                spread,
            }
        })
        .collect();
    let flats: Vec<Vec<f64>> = clusters.iter().map(|c| c.centroid.to_flat()).collect();
    let centroid_distances = flats.iter().map(|a| flats.iter().map(|b| distance(a, b)).collect()).collect();
    Clustering { clusters, centroid_distances }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub system: SystemSpec,
    pub gate: GateKind,
    pub objective: ObjectiveKind,
    pub grid: ControlGrid,
    pub runs: usize,
    pub master_seed: u64,
    pub init: InitScheme,
    pub grape: GrapeParams,
    pub segments: usize,
    pub binning: Binning,
    pub gap_threshold: f64,
}

impl LandscapeConfig {
    /// Desk-scale defaults: 100 runs, uniform starts, 20 quadrature segments.
    pub fn new(system: SystemSpec, gate: GateKind, objective: ObjectiveKind, grid: ControlGrid) -> Self {
        Self {
            system,
            gate,
            objective,
            grid,
            runs: 100,
            master_seed: 0,
            init: InitScheme::UniformUnitCube,
            grape: GrapeParams::default(),
            segments: 20,
            binning: Binning::FreedmanDiaconis,
            gap_threshold: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.grid.validate()?;
        self.grape.validate()?;
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if self.segments == 0 {
            return Err(Error::InvalidParameter("segments must be at least 1".into()));
        }
        if !(self.gap_threshold > 0.0 && self.gap_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!("gap_threshold must lie in (0, 1), got {}", self.gap_threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSummary {
    pub runs: usize,
    pub failures: Vec<RunFailure>,
    /// Final values of successful runs, in run-index order.
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub argmin: usize,
    pub histogram: Histogram,
    pub clustering: Clustering,
    pub peak_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct LandscapeResult {
    pub records: Vec<std::result::Result<RunRecord, String>>,
    pub summary: LandscapeSummary,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {jobs} worker threads: {e}")))
}

/// Runs `cfg.runs` independent inGRAPE runs on `jobs` worker threads. The
/// result does not depend on `jobs`.
pub fn run_landscape(cfg: &LandscapeConfig, jobs: usize) -> Result<LandscapeResult> {
    cfg.validate()?;
    let gen = build_generators(&cfg.system)?;
    let target = GateTarget::new(cfg.gate)?;
    let opts = GradOptions { segments: cfg.segments, ..Default::default() };
    let snapshot = serde_json::to_value(cfg)?;
    let records: Vec<std::result::Result<RunRecord, String>> = thread_pool(jobs)?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|idx| {
                let g0 = initial_params(&cfg.init, cfg.master_seed, idx as u64, &cfg.grid).map_err(|e| e.to_string())?;
                ingrape_run(cfg.objective, &gen, &cfg.grid, &g0, &target, &cfg.grape, &opts)
                    .map(|rec| {
                        let mut config = snapshot.clone();
                        config["run_index"] = idx.into();
                        rec.with_config(config).with_seed(Some(cfg.master_seed))
                    })
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    let summary = summarize(cfg, &records)?;
    Ok(LandscapeResult { records, summary })
}

pub fn summarize(cfg: &LandscapeConfig, records: &[std::result::Result<RunRecord, String>]) -> Result<LandscapeSummary> {
    let mut failures = Vec::new();
    let mut points = Vec::new();
    for (idx, r) in records.iter().enumerate() {
        match r {
            Ok(rec) => points.push((idx, rec.final_value, &rec.controls)),
            Err(e) => failures.push(RunFailure { index: idx, error: e.clone() }),
        }
    }
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (min, max, mean, std, argmin) = if values.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0)
    } else {
        let argmin = points.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        let std = if values.len() > 1 { values.iter().std_dev() } else { 0.0 };
        (Statistics::min(values.iter()), Statistics::max(values.iter()), values.iter().mean(), std, argmin)
    };
    let clustering = detect_clusters(&points, cfg.gap_threshold);
    Ok(LandscapeSummary {
        runs: records.len(),
        failures,
        histogram: histogram(&values, cfg.binning)?,
        peak_count: clustering.clusters.len(),
        clustering,
        values,
        min,
        max,
        mean,
        std,
        argmin,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `runs/run_<idx>.json`, `summary.json` and `histogram.csv` under `dir`.
pub fn write_landscape(dir: &Path, result: &LandscapeResult) -> Result<()> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs)?;
    for (idx, r) in result.records.iter().enumerate() {
        let path = runs.join(format!("run_{idx}.json"));
        match r {
            Ok(rec) => write_json(&path, rec)?,
            Err(e) => write_json(&path, &RunFailure { index: idx, error: e.clone() })?,
        }
    }
    write_json(&dir.join("summary.json"), &result.summary)?;
    write_histogram_csv(&dir.join("histogram.csv"), &result.summary.histogram)
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["bin_left", "bin_right", "count"]).map_err(csv_io)?;
    for (i, count) in hist.counts.iter().enumerate() {
        w.write_record([hist.edges[i].to_string(), hist.edges[i + 1].to_string(), count.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: ::csv::Error) -> Error {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv output: {other:?}")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub system: SystemSpec,
    pub gate: GateKind,
    pub objective: ObjectiveKind,
    pub grid: ControlGrid,
    pub epsilons: Vec<f64>,
    /// Runs per ε; the first starts from the deterministic guess, the others
    /// from uniform draws keyed by `(master_seed, restart)`.
    pub restarts: usize,
    pub master_seed: u64,
    pub grape: GrapeParams,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub best_value: f64,
    /// Iterations of the best run.
    pub iterations: usize,
    pub values: Vec<f64>,
    pub best_controls: ControlVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Pairs `(ε_i, ε_j)` with `ε_i < ε_j` whose best values decrease by
    /// more than 20 %.
    pub trend_violations: Vec<(f64, f64)>,
}

pub fn epsilon_sweep(cfg: &SweepConfig, jobs: usize) -> Result<SweepResult> {
    cfg.grid.validate()?;
    cfg.grape.validate()?;
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    if let Some(e) = cfg.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!("epsilon must be non-negative, got {e}")));
    }
    let target = GateTarget::new(cfg.gate)?;
    let opts = GradOptions { segments: cfg.segments, ..Default::default() };
    let tasks: Vec<(usize, usize)> = (0..cfg.epsilons.len())
        .flat_map(|i| (0..cfg.restarts).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<RunRecord>> = thread_pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, r)| {
                let gen = build_generators(&cfg.system.with_epsilon(cfg.epsilons[i]))?;
                let g0 = if r == 0 {
                    ParamVector::paper_guess(&cfg.grid)
                } else {
                    sample_initial(cfg.master_seed, r as u64, cfg.grid.intervals)
                };
                ingrape_run(cfg.objective, &gen, &cfg.grid, &g0, &target, &cfg.grape, &opts)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    let mut it = results.into_iter();
    for &epsilon in &cfg.epsilons {
        let recs: Vec<RunRecord> = (0..cfg.restarts).map(|_| it.next().unwrap()).collect::<Result<_>>()?;
        let best = recs.iter().min_by(|a, b| a.final_value.total_cmp(&b.final_value)).unwrap();
        rows.push(SweepRow {
            epsilon,
            best_value: best.final_value,
            iterations: best.iterations,
            values: recs.iter().map(|r| r.final_value).collect(),
            best_controls: best.controls.clone(),
        });
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    let mut trend_violations = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if sorted[j].epsilon > sorted[i].epsilon && sorted[j].best_value < 0.8 * sorted[i].best_value {
                trend_violations.push((sorted[i].epsilon, sorted[j].epsilon));
            }
        }
    }
    Ok(SweepResult { rows, trend_violations })
}

/// Writes `sweep.csv` (`epsilon,best_value,iterations`) and `sweep.json`.
pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = ::csv::Writer::from_path(dir.join("sweep.csv")).map_err(csv_io)?;
    w.write_record(["epsilon", "best_value", "iterations"]).map_err(csv_io)?;
    for row in &result.rows {
        w.write_record([row.epsilon.to_string(), row.best_value.to_string(), row.iterations.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    write_json(&dir.join("sweep.json"), result)
}
