//! Reference trajectory generators and seeded experiment sweeps.
//!
//! An experiment expands into one run per
//! `(sweep value, trajectory, preset, repetition)`. Runs execute in
//! parallel; each owns its plant and random streams, and rows are written
//! in job order so reports are byte-identical across reruns.
//!
//! Output directory layout:
//!
//! ```text
//! summary.csv     one row per run
//! aggregate.csv   mean/min/max per sweep value
//! logs/           per-step task log for each run
//! sources.csv     transfer only: the source runs
//! datasets/       transfer only: saved source datasets
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identification::{transfer_models, Dataset};
use crate::manipulation::{run_task, trace_metrics, LoopConfig, ReferenceTrajectory, TaskResult};
use crate::plant::{PlantPreset, SyntheticPlant};
use crate::types::Point3;

pub const SCHEMA_LINE: &str = "# schema=1";

/// Default edge length of the generated shapes, mm.
pub const DEFAULT_SCALE: f64 = 16.0;

pub const SPIRAL_TURNS: f64 = 2.0;
pub const SPIRAL_POINTS_PER_TURN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Triangle,
    Square,
    Pi,
    Spiral,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Triangle,
        TrajectoryKind::Square,
        TrajectoryKind::Pi,
        TrajectoryKind::Spiral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Triangle => "triangle",
            TrajectoryKind::Square => "square",
            TrajectoryKind::Pi => "pi",
            TrajectoryKind::Spiral => "spiral",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrajectoryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown trajectory `{s}` (triangle, square, pi, spiral)")))
    }
}

/// Keypoints in the plane `z = origin.z`, inside a `scale x scale` box, with
/// the first keypoint at `origin`.
///
/// * triangle: `(0,0) (s,0) (s/2, s*sqrt(3)/2) (0,0)`
/// * square: `(0,0) (s,0) (s,s) (0,s) (0,0)`
/// * pi: left leg bottom-up, crossbar left to right with a short overhang
///   retrace, right leg top-down; nine keypoints, shifted so the left foot
///   is the origin
/// * spiral: Archimedean `r = (s/2) * theta / (2 pi turns)` sampled every
///   `2 pi / 8` rad for two turns, starting at the centre
pub fn make_trajectory(kind: TrajectoryKind, scale: f64, origin: Point3) -> Result<ReferenceTrajectory> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("trajectory scale must be positive, got {scale}")));
    }
    let unit: Vec<(f64, f64)> = match kind {
        TrajectoryKind::Triangle => vec![(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0), (0.0, 0.0)],
        TrajectoryKind::Square => vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)],
        TrajectoryKind::Pi => [
            (0.25, 0.0),
            (0.25, 0.4),
            (0.25, 0.8),
            (0.0, 0.8),
            (0.5, 0.8),
            (1.0, 0.8),
            (0.75, 0.8),
            (0.75, 0.4),
            (0.75, 0.0),
        ]
        .iter()
        .map(|(x, y)| (x - 0.25, *y))
        .collect(),
        TrajectoryKind::Spiral => {
            let n = (SPIRAL_TURNS * SPIRAL_POINTS_PER_TURN as f64) as usize;
            (0..=n)
                .map(|k| {
                    let theta = 2.0 * PI * k as f64 / SPIRAL_POINTS_PER_TURN as f64;
                    let r = 0.5 * k as f64 / n as f64;
                    (r * theta.cos(), r * theta.sin())
                })
                .collect()
        }
    };
    let keypoints = unit
        .into_iter()
        .map(|(x, y)| origin + Vector3::new(x * scale, y * scale, 0.0))
        .collect();
    ReferenceTrajectory::new(kind.name(), keypoints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Single,
    InitialActionsSweep,
    SigmaSweep,
    Transfer,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Single => "single",
            ExperimentKind::InitialActionsSweep => "initial_actions_sweep",
            ExperimentKind::SigmaSweep => "sigma_sweep",
            ExperimentKind::Transfer => "transfer",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Total initial actions, sigma values, or (transfer) the source's
    /// initial action count. Ignored for `Single`.
    pub sweep_values: Vec<f64>,
    pub trajectories: Vec<TrajectoryKind>,
    /// Plants the runs execute on (transfer: the target plants).
    pub presets: Vec<PlantPreset>,
    pub repetitions: usize,
    pub seed_base: u64,
    pub output_path: PathBuf,
    /// Settings shared by every run; the swept field is overridden per run.
    pub base: LoopConfig,
    pub scale: f64,
    /// Transfer only: the plant the models are identified on.
    pub source_preset: Option<PlantPreset>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.kind != ExperimentKind::Single && self.sweep_values.is_empty() {
            return Err(Error::invalid("sweep kinds need at least one sweep value"));
        }
        if self.trajectories.is_empty() || self.presets.is_empty() {
            return Err(Error::invalid("need at least one trajectory and one preset"));
        }
        if self.sweep_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep values must be finite"));
        }
        match self.kind {
            ExperimentKind::InitialActionsSweep | ExperimentKind::Transfer => {
                if self.sweep_values.iter().any(|v| *v < 2.0 || v.fract() != 0.0) {
                    return Err(Error::invalid("initial action counts must be integers >= 2"));
                }
            }
            ExperimentKind::SigmaSweep => {
                if self.sweep_values.iter().any(|v| *v < 0.0) {
                    return Err(Error::invalid("sigma values must be non-negative"));
                }
            }
            ExperimentKind::Single => {}
        }
        if self.kind == ExperimentKind::Transfer && self.source_preset.is_none() {
            return Err(Error::invalid("transfer needs a source preset"));
        }
        for p in &self.presets {
            p.validate()?;
        }
        self.base.validate()
    }

    fn values(&self) -> Vec<f64> {
        match self.kind {
            ExperimentKind::Single => vec![self.base.exploration.initial_actions() as f64],
            _ => self.sweep_values.clone(),
        }
    }

    /// Loop configuration for one run at `value`.
    pub fn config_for(&self, value: f64, seed: u64) -> LoopConfig {
        let mut cfg = self.base.clone();
        match self.kind {
            ExperimentKind::InitialActionsSweep | ExperimentKind::Transfer => {
                cfg.exploration = cfg.exploration.with_initial_actions(value as usize);
            }
            ExperimentKind::SigmaSweep => cfg.mpc.sigma = value,
            ExperimentKind::Single => {}
        }
        cfg.seed = seed;
        cfg
    }
}

/// `seed_base XOR` the first eight bytes (little endian) of
/// `SHA-256("{value:?}|{trajectory}|{preset}|{repetition}")`.
pub fn derive_seed(seed_base: u64, value: f64, trajectory: &str, preset: &str, repetition: usize) -> u64 {
    let digest = Sha256::digest(format!("{value:?}|{trajectory}|{preset}|{repetition}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed_base ^ u64::from_le_bytes(bytes)
}

/// Plant noise stream seed for a run seed; keeps it distinct from the controller stream.
pub fn plant_seed(run_seed: u64) -> u64 {
    run_seed ^ 0x5DEE_CE66_D1CE_4E5B
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub kind: String,
    pub sweep_value: f64,
    pub trajectory: String,
    pub preset: String,
    pub repetition: usize,
    pub seed: u64,
    pub status: String,
    pub mean_error: f64,
    pub max_error: f64,
    pub adapting_actions: usize,
    pub initial_actions: usize,
    pub exploratory_actions: usize,
    pub steps: usize,
    pub completed: bool,
    pub log_file: String,
    pub message: String,
}

impl RunRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub runs: usize,
    pub completed_runs: usize,
    pub mean_error_mean: f64,
    pub mean_error_min: f64,
    pub mean_error_max: f64,
    pub adapting_actions_mean: f64,
    pub adapting_actions_min: usize,
    pub adapting_actions_max: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub sources: Vec<RunRow>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().chain(&self.sources).filter(|r| !r.is_ok()).count()
    }

    pub fn aggregate(&self, value: f64) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.sweep_value == value)
    }
}

struct Job {
    value: f64,
    trajectory: TrajectoryKind,
    preset: usize,
    repetition: usize,
}

struct SourceRun {
    row: RunRow,
    dataset: Option<Dataset>,
}

/// Runs every job of `spec` and writes the report files.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let out = &spec.output_path;
    let logs = out.join("logs");
    fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;

    let values = spec.values();
    let mut jobs = Vec::new();
    for &value in &values {
        for &trajectory in &spec.trajectories {
            for preset in 0..spec.presets.len() {
                for repetition in 0..spec.repetitions {
                    jobs.push(Job {
                        value,
                        trajectory,
                        preset,
                        repetition,
                    });
                }
            }
        }
    }

    // Transfer: one source identification + task per (value, trajectory, repetition).
    let mut sources: BTreeMap<(usize, TrajectoryKind, usize), SourceRun> = BTreeMap::new();
    if spec.kind == ExperimentKind::Transfer {
        let datasets = out.join("datasets");
        fs::create_dir_all(&datasets).map_err(|e| Error::io(&datasets, e))?;
        let source = spec.source_preset.as_ref().expect("validated");
        let keys: Vec<(usize, TrajectoryKind, usize)> = (0..values.len())
            .flat_map(|v| {
                spec.trajectories
                    .iter()
                    .flat_map(move |&t| (0..spec.repetitions).map(move |r| (v, t, r)))
            })
            .collect();
        let runs: Vec<SourceRun> = keys
            .par_iter()
            .map(|&(v, t, r)| run_source(spec, values[v], t, source, r, &datasets, &logs))
            .collect();
        sources = keys.into_iter().zip(runs).collect();
    }

    let rows: Vec<RunRow> = jobs
        .par_iter()
        .map(|job| {
            let initial = if spec.kind == ExperimentKind::Transfer {
                let v = values.iter().position(|x| *x == job.value).expect("value from list");
                match &sources[&(v, job.trajectory, job.repetition)].dataset {
                    Some(ds) => Some(ds.clone()),
                    None => {
                        return failed_row(spec, job, "source identification failed".to_string());
                    }
                }
            } else {
                None
            };
            run_job(spec, job, initial, &logs)
        })
        .collect();

    let aggregates = aggregate_rows(&rows);
    write_rows(&out.join("summary.csv"), &rows)?;
    write_rows(&out.join("aggregate.csv"), &aggregates)?;
    let source_rows: Vec<RunRow> = sources.into_values().map(|s| s.row).collect();
    if spec.kind == ExperimentKind::Transfer {
        write_rows(&out.join("sources.csv"), &source_rows)?;
    }
    Ok(ExperimentReport {
        rows,
        aggregates,
        sources: source_rows,
    })
}

fn run_id(kind: &str, value: f64, trajectory: TrajectoryKind, preset: &str, repetition: usize) -> String {
    format!("{kind}_v{value}_{trajectory}_{preset}_r{repetition}")
}

fn run_source(
    spec: &ExperimentSpec,
    value: f64,
    trajectory: TrajectoryKind,
    source: &PlantPreset,
    repetition: usize,
    datasets: &Path,
    logs: &Path,
) -> SourceRun {
    let seed = derive_seed(spec.seed_base, value, trajectory.name(), &source.name, repetition);
    let id = run_id("source", value, trajectory, &source.name, repetition);
    let mut cfg = spec.base.clone();
    cfg.exploration = cfg.exploration.with_initial_actions(value as usize);
    cfg.seed = seed;
    let outcome = execute_run(source, trajectory, spec.scale, &cfg, seed, None);
    let log_file = format!("logs/{id}.log");
    let mut row = to_row("source", value, trajectory, &source.name, repetition, seed, &outcome, &log_file);
    let mut dataset = None;
    if let Ok(result) = &outcome {
        if let Err(e) = result.write_log(&logs.join(format!("{id}.log"))) {
            row.status = "failed".into();
            row.message = e.to_string();
        }
        if let Some(ds) = &result.identified_dataset {
            let path = datasets.join(format!("{id}.dataset"));
            match ds.save(&path) {
                Ok(()) => dataset = Some(ds.clone()),
                Err(e) => {
                    row.status = "failed".into();
                    row.message = e.to_string();
                }
            }
        }
    }
    SourceRun { row, dataset }
}

fn run_job(spec: &ExperimentSpec, job: &Job, transferred: Option<Dataset>, logs: &Path) -> RunRow {
    let preset = &spec.presets[job.preset];
    let seed = derive_seed(spec.seed_base, job.value, job.trajectory.name(), &preset.name, job.repetition);
    let cfg = spec.config_for(job.value, seed);
    let id = run_id(spec.kind.name(), job.value, job.trajectory, &preset.name, job.repetition);
    let outcome = execute_run(preset, job.trajectory, spec.scale, &cfg, seed, transferred);
    let log_file = format!("logs/{id}.log");
    let mut row = to_row(spec.kind.name(), job.value, job.trajectory, &preset.name, job.repetition, seed, &outcome, &log_file);
    if let Ok(result) = &outcome {
        if let Err(e) = result.write_log(&logs.join(format!("{id}.log"))) {
            row.status = "failed".into();
            row.message = e.to_string();
        }
    }
    row
}

fn failed_row(spec: &ExperimentSpec, job: &Job, message: String) -> RunRow {
    let preset = &spec.presets[job.preset];
    let seed = derive_seed(spec.seed_base, job.value, job.trajectory.name(), &preset.name, job.repetition);
    to_row(
        spec.kind.name(),
        job.value,
        job.trajectory,
        &preset.name,
        job.repetition,
        seed,
        &Err(Error::invalid(message)),
        "",
    )
}

/// One seeded task on a fresh plant, optionally starting from a transferred dataset.
pub fn execute_run(
    preset: &PlantPreset,
    trajectory: TrajectoryKind,
    scale: f64,
    config: &LoopConfig,
    seed: u64,
    transferred: Option<Dataset>,
) -> Result<TaskResult> {
    let mut plant = SyntheticPlant::reset(preset.clone(), plant_seed(seed))?;
    let reference = make_trajectory(trajectory, scale, preset.origin())?;
    let initial = match transferred {
        Some(ds) => Some(transfer_models(&ds, &config.exploration)?),
        None => None,
    };
    run_task(&mut plant, &reference, config, initial)
}

#[allow(clippy::too_many_arguments)]
fn to_row(
    kind: &str,
    value: f64,
    trajectory: TrajectoryKind,
    preset: &str,
    repetition: usize,
    seed: u64,
    outcome: &Result<TaskResult>,
    log_file: &str,
) -> RunRow {
    let mut row = RunRow {
        kind: kind.to_string(),
        sweep_value: value,
        trajectory: trajectory.name().to_string(),
        preset: preset.to_string(),
        repetition,
        seed,
        status: "ok".into(),
        mean_error: 0.0,
        max_error: 0.0,
        adapting_actions: 0,
        initial_actions: 0,
        exploratory_actions: 0,
        steps: 0,
        completed: false,
        log_file: log_file.to_string(),
        message: String::new(),
    };
    match outcome {
        Ok(result) => {
            let s = trace_metrics(result);
            row.mean_error = s.mean_error;
            row.max_error = s.max_error;
            row.adapting_actions = s.adapting_actions;
            row.initial_actions = s.initial_actions;
            row.exploratory_actions = s.exploratory_actions;
            row.steps = s.steps;
            row.completed = s.completed;
        }
        Err(e) => {
            row.status = "failed".into();
            row.message = e.to_string();
            row.log_file.clear();
        }
    }
    row
}

/// Per sweep value, over successful runs, in ascending value order.
pub fn aggregate_rows(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(f64, Vec<&RunRow>)> = Vec::new();
    for row in rows.iter().filter(|r| r.is_ok()) {
        match groups.iter_mut().find(|(v, _)| *v == row.sweep_value) {
            Some((_, g)) => g.push(row),
            None => groups.push((row.sweep_value, vec![row])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
        .into_iter()
        .map(|(value, g)| {
            let n = g.len() as f64;
            AggregateRow {
                sweep_value: value,
                runs: g.len(),
                completed_runs: g.iter().filter(|r| r.completed).count(),
                mean_error_mean: g.iter().map(|r| r.mean_error).sum::<f64>() / n,
                mean_error_min: g.iter().map(|r| r.mean_error).fold(f64::INFINITY, f64::min),
                mean_error_max: g.iter().map(|r| r.mean_error).fold(f64::NEG_INFINITY, f64::max),
                adapting_actions_mean: g.iter().map(|r| r.adapting_actions as f64).sum::<f64>() / n,
                adapting_actions_min: g.iter().map(|r| r.adapting_actions).min().unwrap_or(0),
                adapting_actions_max: g.iter().map(|r| r.adapting_actions).max().unwrap_or(0),
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut buf = format!("{SCHEMA_LINE}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush().map_err(io)?;
    }
    if rows.is_empty() {
        // csv writes headers only alongside the first record.
        buf.extend_from_slice(header_line::<T>().as_bytes());
    }
    fs::write(path, buf).map_err(io)
}

fn header_line<T>() -> String {
    let name = std::any::type_name::<T>();
    if name.ends_with("RunRow") {
        "kind,sweep_value,trajectory,preset,repetition,seed,status,mean_error,max_error,adapting_actions,initial_actions,exploratory_actions,steps,completed,log_file,message\n".into()
    } else {
        "sweep_value,runs,completed_runs,mean_error_mean,mean_error_min,mean_error_max,adapting_actions_mean,adapting_actions_min,adapting_actions_max\n".into()
    }
}

/// Reads a `summary.csv` produced by [`run_experiment`].
pub fn read_summary(text: &str) -> Result<Vec<RunRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.deserialize::<RunRow>() {
        rows.push(rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?);
    }
    Ok(rows)
}

pub const PLOTDATA_HEADER: &str = "sweep_value,mean_error,error_spread,mean_adapting_actions,runs";

/// Per-sweep-value table: value, mean of per-run mean errors, their
/// population standard deviation, mean adapting actions, run count.
pub fn emit_plotdata(summary_text: &str) -> Result<String> {
    let rows = read_summary(summary_text)?;
    let mut out = format!("{SCHEMA_LINE} kind=plotdata\n{PLOTDATA_HEADER}\n");
    for agg in aggregate_rows(&rows) {
        let errors: Vec<f64> = rows
            .iter()
            .filter(|r| r.is_ok() && r.sweep_value == agg.sweep_value)
            .map(|r| r.mean_error)
            .collect();
        let m = agg.mean_error_mean;
        let spread = (errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / errors.len() as f64).sqrt();
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{}\n",
            agg.sweep_value, m, spread, agg.adapting_actions_mean, agg.runs
        ));
    }
    Ok(out)
}

pub fn emit_plotdata_file(summary: &Path) -> Result<String> {
    let text = fs::read_to_string(summary).map_err(|e| Error::io(summary, e))?;
    emit_plotdata(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_layout() {
        let t = make_trajectory(TrajectoryKind::Square, 16.0, Vector3::zeros()).unwrap();
        let expected = [(0.0, 0.0), (16.0, 0.0), (16.0, 16.0), (0.0, 16.0), (0.0, 0.0)];
        assert_eq!(t.keypoints().len(), 5);
        for (k, (x, y)) in t.keypoints().iter().zip(expected) {
            assert_eq!(*k, Vector3::new(x, y, 0.0));
        }
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(make_trajectory(TrajectoryKind::Triangle, 0.0, Vector3::zeros()).is_err());
        assert!(make_trajectory(TrajectoryKind::Triangle, -1.0, Vector3::zeros()).is_err());
        assert!("hexagon".parse::<TrajectoryKind>().is_err());
    }

    #[test]
    fn shapes_fit_box_and_start_at_origin() {
        let origin = Vector3::new(3.0, -2.0, 1.0);
        for kind in TrajectoryKind::ALL {
            let t = make_trajectory(kind, 16.0, origin).unwrap();
            assert_eq!(t.keypoints()[0], origin, "{kind}");
            let xs: Vec<f64> = t.keypoints().iter().map(|k| k.x).collect();
            let ys: Vec<f64> = t.keypoints().iter().map(|k| k.y).collect();
            let span = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(span(&xs) <= 16.0 + 1e-9 && span(&ys) <= 16.0 + 1e-9, "{kind}");
            assert!(t.keypoints().iter().all(|k| k.z == 1.0));
        }
        assert_eq!(make_trajectory(TrajectoryKind::Triangle, 1.0, origin).unwrap().keypoints().len(), 4);
        assert!(make_trajectory(TrajectoryKind::Pi, 1.0, origin).unwrap().keypoints().len() >= 8);
        assert!(make_trajectory(TrajectoryKind::Spiral, 1.0, origin).unwrap().keypoints().len() >= 12);
    }

    #[test]
    fn spiral_radius_grows() {
        let t = make_trajectory(TrajectoryKind::Spiral, 16.0, Vector3::zeros()).unwrap();
        let k = t.keypoints();
        for w in k.windows(2) {
            assert!((w[1] - w[0]).norm() > 0.0);
            assert!(w[1].norm() > w[0].norm());
        }
    }

    #[test]
    fn seed_derivation_is_stable() {
        let a = derive_seed(42, 20.0, "square", "preset-4", 3);
        assert_eq!(a, derive_seed(42, 20.0, "square", "preset-4", 3));
        assert_ne!(a, derive_seed(42, 20.0, "square", "preset-4", 4));
        assert_ne!(a, derive_seed(43, 20.0, "square", "preset-4", 3));
        assert_eq!(derive_seed(0, 20.0, "square", "preset-4", 3) ^ 42, a);
    }

    fn row(value: f64, err: f64, adapting: usize) -> RunRow {
        RunRow {
            kind: "sigma_sweep".into(),
            sweep_value: value,
            trajectory: "square".into(),
            preset: "preset-4".into(),
            repetition: 0,
            seed: 1,
            status: "ok".into(),
            mean_error: err,
            max_error: err,
            adapting_actions: adapting,
            initial_actions: 20,
            exploratory_actions: 20 + adapting,
            steps: 10,
            completed: true,
            log_file: String::new(),
            message: String::new(),
        }
    }

    #[test]
    fn plotdata_means_and_empty_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_rows::<RunRow>(&path, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let out = emit_plotdata(&text).unwrap();
        assert_eq!(out.lines().count(), 2);

        write_rows(&path, &[row(0.1, 1.0, 3), row(0.1, 3.0, 0)]).unwrap();
        let out = emit_plotdata(&fs::read_to_string(&path).unwrap()).unwrap();
        let line = out.lines().nth(2).unwrap();
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], "0.1");
        assert_eq!(f[1], "2.0");
        assert_eq!(f[2], "1.0");
        assert_eq!(f[3], "1.5");
    }

    #[test]
    fn malformed_summary_reports_line() {
        let text = format!("{SCHEMA_LINE}\n{}ok,not-a-number\n", header_line::<RunRow>());
        match emit_plotdata(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            r => panic!("{r:?}"),
        }
    }
}
