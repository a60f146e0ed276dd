//! Keypoint-by-keypoint task execution with error-triggered model updates.

use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::{self_identify, self_identify_from, Dataset, ExplorationConfig, IdentifyMode, ManipulationModels};
use crate::mpc::{self, interpolate, nearest_waypoint, IntermediateTrajectory, MpcConfig, MpcPlan};
use crate::plant::Plant;
use crate::types::{Control, Point3};

const LOG_SCHEMA: &str = "# schema=1 kind=task_log";

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    name: String,
    keypoints: Vec<Point3>,
}

impl ReferenceTrajectory {
    pub fn new(name: impl Into<String>, keypoints: Vec<Point3>) -> Result<Self> {
        if keypoints.is_empty() {
            return Err(Error::invalid("a reference trajectory needs at least one keypoint"));
        }
        if keypoints.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("non-finite keypoint"));
        }
        if keypoints.windows(2).any(|w| (w[1] - w[0]).norm() <= 1e-9) {
            return Err(Error::invalid("consecutive keypoints coincide"));
        }
        Ok(ReferenceTrajectory {
            name: name.into(),
            keypoints,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn keypoints(&self) -> &[Point3] {
        &self.keypoints
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Keypoint reach tolerance, mm.
    pub alpha: f64,
    /// Manipulation error that triggers a model update, mm.
    pub gamma: f64,
    /// Hard cap on control steps for one task.
    pub max_steps: usize,
    pub exploration: ExplorationConfig,
    pub mpc: MpcConfig,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            alpha: 1.0,
            gamma: 2.0,
            max_steps: 2000,
            exploration: ExplorationConfig::default(),
            mpc: MpcConfig::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(self.gamma > self.alpha) {
            return Err(Error::invalid("gamma must exceed alpha"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        self.exploration.validate()?;
        self.mpc.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// One-based index of the targeted keypoint (zero is the start position).
    pub keypoint: usize,
    pub control: Control,
    /// Observed POM after executing `control`.
    pub z: Point3,
    pub error: f64,
    /// A model update ran after this step.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub trajectory_name: String,
    pub executed: Vec<StepRecord>,
    pub initial_action_count: usize,
    pub adapting_action_count: usize,
    pub updates: usize,
    pub mean_manipulation_error: f64,
    pub completed: bool,
    pub steps_used: usize,
    pub keypoints_reached: usize,
    /// Dataset the task started controlling with (after initial identification or transfer).
    pub identified_dataset: Option<Dataset>,
    pub final_dataset: Option<Dataset>,
}

impl TaskResult {
    fn new(name: &str) -> Self {
        TaskResult {
            trajectory_name: name.to_string(),
            executed: Vec::new(),
            initial_action_count: 0,
            adapting_action_count: 0,
            updates: 0,
            mean_manipulation_error: 0.0,
            completed: false,
            steps_used: 0,
            keypoints_reached: 0,
            identified_dataset: None,
            final_dataset: None,
        }
    }

    fn finalize(&mut self) {
        self.steps_used = self.executed.len();
        self.mean_manipulation_error = mean(self.executed.iter().map(|r| r.error));
    }

    /// Total controls sent to the plant: control steps plus exploratory actions.
    pub fn plant_executions(&self) -> usize {
        self.steps_used + self.initial_action_count + self.adapting_action_count
    }

    /// Per-step log followed by a summary line.
    pub fn to_log(&self) -> String {
        let dim = self.executed.first().map_or(0, |r| r.control.dim());
        let mut out = String::new();
        let _ = writeln!(out, "{LOG_SCHEMA} trajectory={} control_dim={dim}", self.trajectory_name);
        let mut header = vec!["step".to_string(), "keypoint".to_string()];
        header.extend((0..dim).map(|c| format!("u{c}")));
        header.extend(["z_x", "z_y", "z_z", "error", "update"].map(String::from));
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.executed {
            let mut fields = vec![r.step.to_string(), r.keypoint.to_string()];
            fields.extend(r.control.as_slice().iter().map(|v| format!("{v:?}")));
            fields.extend(r.z.iter().map(|v| format!("{v:?}")));
            fields.push(format!("{:?}", r.error));
            fields.push(u8::from(r.updated).to_string());
            let _ = writeln!(out, "{}", fields.join(","));
        }
        let s = trace_metrics(self);
        let _ = writeln!(
            out,
            "# summary mean_error={:?} max_error={:?} adapting_actions={} initial_actions={} exploratory_actions={} steps={} completed={}",
            s.mean_error, s.max_error, s.adapting_actions, s.initial_actions, s.exploratory_actions, s.steps, s.completed
        );
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_log()).map_err(|e| Error::io(path, e))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `|z - w_j*|` for the waypoint nearest to `z`.
pub fn manipulation_error(z: &Point3, traj: &IntermediateTrajectory) -> f64 {
    (z - traj.waypoints()[nearest_waypoint(traj, z)]).norm()
}

/// Runs the task. `initial` supplies transferred models and their dataset, in
/// which case no initial exploratory actions are executed.
pub fn run_task<P: Plant + ?Sized>(
    plant: &mut P,
    reference: &ReferenceTrajectory,
    config: &LoopConfig,
    initial: Option<(ManipulationModels, Dataset)>,
) -> Result<TaskResult> {
    run_task_observed(plant, reference, config, initial, |_, _| {})
}

/// Same as [`run_task`], calling `observer(step, plan)` before every executed control.
pub fn run_task_observed<P: Plant + ?Sized>(
    plant: &mut P,
    reference: &ReferenceTrajectory,
    config: &LoopConfig,
    initial: Option<(ManipulationModels, Dataset)>,
    mut observer: impl FnMut(usize, &MpcPlan),
) -> Result<TaskResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut result = TaskResult::new(reference.name());
    let fail = |source: Error, result: &mut TaskResult| {
        result.finalize();
        Error::Task {
            source: Box::new(source),
            partial: Box::new(result.clone()),
        }
    };

    let z0 = plant.observe();
    let mut keypoints = Vec::with_capacity(reference.keypoints().len() + 1);
    keypoints.push(z0);
    keypoints.extend_from_slice(reference.keypoints());

    let (mut models, mut dataset) = match initial {
        Some((models, dataset)) => (models, dataset),
        None => {
            let empty = Dataset::with_capacity_limit(config.exploration.control_dim, config.exploration.capacity);
            let id = self_identify(plant, &config.exploration, empty, IdentifyMode::Initial, &mut rng)
                .map_err(|e| fail(e, &mut result))?;
            result.initial_action_count = id.actions.len();
            (id.models, id.dataset)
        }
    };
    result.identified_dataset = Some(dataset.clone());

    let mpc_config = config.mpc;
    let mut z = plant.observe();
    'keypoints: for i in 1..keypoints.len() {
        let target = keypoints[i];
        let segment = interpolate(&keypoints[i - 1], &target, mpc_config.waypoint_spacing)?;
        let mut homing: Option<IntermediateTrajectory> = None;
        while (target - z).norm() > config.alpha {
            if result.executed.len() >= config.max_steps {
                break 'keypoints;
            }
            let step = result.executed.len();
            let step_seed = rng.next_u64();
            let active = homing.as_ref().unwrap_or(&segment);
            let mut plan = mpc::plan(&models, &z, active, &mpc_config, step_seed).map_err(|e| fail(e, &mut result))?;
            if plan.at_final_waypoint() {
                // Past the end of the tracked path but outside the reach
                // tolerance: lay a return path from here to the keypoint and
                // track it until the keypoint is reached.
                let path = interpolate(&z, &target, mpc_config.waypoint_spacing)?;
                plan = mpc::plan(&models, &z, &path, &mpc_config, step_seed).map_err(|e| fail(e, &mut result))?;
                homing = Some(path);
            }
            observer(step, &plan);
            z = plant.execute(&plan.control).map_err(|e| fail(e, &mut result))?;
            let error = manipulation_error(&z, homing.as_ref().unwrap_or(&segment));
            // A step right after an update may not trigger another one.
            let just_updated = result.executed.last().is_some_and(|r| r.updated);
            let update = error > config.gamma && !just_updated;
            result.executed.push(StepRecord {
                step,
                keypoint: i,
                control: plan.control,
                z,
                error,
                updated: update,
            });
            if update {
                let id = self_identify_from(plant, &config.exploration, dataset.clone(), Some(&models), IdentifyMode::Adapt, &mut rng)
                    .map_err(|e| fail(e, &mut result))?;
                result.adapting_action_count += id.actions.len();
                result.updates += 1;
                models = id.models;
                dataset = id.dataset;
                z = plant.observe();
                // The adapting actions moved the object off the path; resume
                // from where they left it.
                homing = Some(interpolate(&z, &target, mpc_config.waypoint_spacing)?);
            }
        }
        result.keypoints_reached = i;
    }
    result.completed = result.keypoints_reached == keypoints.len() - 1;
    result.final_dataset = Some(dataset);
    result.finalize();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mean_error: f64,
    pub max_error: f64,
    pub adapting_actions: usize,
    pub initial_actions: usize,
    pub exploratory_actions: usize,
    pub steps: usize,
    pub completed: bool,
}

pub fn trace_metrics(result: &TaskResult) -> TraceSummary {
    TraceSummary {
        mean_error: mean(result.executed.iter().map(|r| r.error)),
        max_error: result.executed.iter().map(|r| r.error).fold(0.0, f64::max),
        adapting_actions: result.adapting_action_count,
        initial_actions: result.initial_action_count,
        exploratory_actions: result.adapting_action_count + result.initial_action_count,
        steps: result.executed.len(),
        completed: result.completed,
    }
}

/// A parsed task log.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLog {
    pub trajectory_name: String,
    pub records: Vec<StepRecord>,
    pub summary: TraceSummary,
}

impl TaskLog {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty log"))?;
        let rest = first
            .strip_prefix(LOG_SCHEMA)
            .ok_or_else(|| Error::parse(1, format!("expected `{LOG_SCHEMA}` header")))?;
        let mut trajectory_name = String::new();
        let mut dim = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("trajectory", v)) => trajectory_name = v.to_string(),
                Some(("control_dim", v)) => dim = Some(v.parse::<usize>().map_err(|e| Error::parse(1, e.to_string()))?),
                _ => {}
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(1, "missing control_dim"))?;
        lines.next().ok_or_else(|| Error::parse(2, "missing column header"))?;

        let mut records = Vec::new();
        let mut summary = None;
        for (n, line) in lines {
            if let Some(s) = line.strip_prefix("# summary ") {
                summary = Some(parse_summary(s, n)?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != dim + 7 {
                return Err(Error::parse(n, format!("expected {} fields, found {}", dim + 7, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(n, format!("`{s}`: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(n, format!("`{s}`: {e}")));
            let control = Control::new(f[2..2 + dim].iter().map(|s| num(s)).collect::<Result<_>>()?);
            let z = Point3::new(num(f[2 + dim])?, num(f[3 + dim])?, num(f[4 + dim])?);
            records.push(StepRecord {
                step: int(f[0])?,
                keypoint: int(f[1])?,
                control,
                z,
                error: num(f[5 + dim])?,
                updated: match f[6 + dim] {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::parse(n, format!("bad update flag `{other}`"))),
                },
            });
        }
        let summary = summary.ok_or_else(|| Error::parse(0, "missing summary line"))?;
        Ok(TaskLog {
            trajectory_name,
            records,
            summary,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_summary(s: &str, line: usize) -> Result<TraceSummary> {
    let mut out = TraceSummary {
        mean_error: 0.0,
        max_error: 0.0,
        adapting_actions: 0,
        initial_actions: 0,
        exploratory_actions: 0,
        steps: 0,
        completed: false,
    };
    let bad = |k: &str, v: &str| Error::parse(line, format!("bad summary value {k}={v}"));
    for kv in s.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::parse(line, format!("bad summary field `{kv}`")))?;
        match k {
            "mean_error" => out.mean_error = v.parse().map_err(|_| bad(k, v))?,
            "max_error" => out.max_error = v.parse().map_err(|_| bad(k, v))?,
            "adapting_actions" => out.adapting_actions = v.parse().map_err(|_| bad(k, v))?,
            "initial_actions" => out.initial_actions = v.parse().map_err(|_| bad(k, v))?,
            "exploratory_actions" => out.exploratory_actions = v.parse().map_err(|_| bad(k, v))?,
            "steps" => out.steps = v.parse().map_err(|_| bad(k, v))?,
            "completed" => out.completed = v.parse().map_err(|_| bad(k, v))?,
            _ => return Err(Error::parse(line, format!("unknown summary field `{k}`"))),
        }
    }
    Ok(out)
}
