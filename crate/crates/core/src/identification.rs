//! Exploratory data acquisition and fitting of the forward/inverse models.
//!
//! The dataset holds `(control, observed motion)` pairs. Initial
//! identification executes `d` uniformly random controls and then `a`
//! density-guided ones; an update (adapt mode) executes `b` density-guided
//! controls only. Density-guided controls are the midpoint between the
//! sparsest motion sample and its nearest neighbour in motion space.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, KernelParams, DEFAULT_MAX_JITTER_RETRIES};
use crate::plant::Plant;
use crate::types::{Control, Motion};

const DATASET_HEADER: &str = "# selfid-dataset schema=1";

/// Ordered `(control, motion)` pairs, optionally capped (oldest pairs are evicted first).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    control_dim: usize,
    capacity: Option<usize>,
    pairs: VecDeque<(Control, Motion)>,
}

impl Dataset {
    pub fn new(control_dim: usize) -> Self {
        Dataset {
            control_dim,
            capacity: None,
            pairs: VecDeque::new(),
        }
    }

    pub fn with_capacity_limit(control_dim: usize, capacity: Option<usize>) -> Self {
        Dataset {
            capacity,
            ..Dataset::new(control_dim)
        }
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: Option<usize>) {
        self.capacity = capacity;
        self.evict();
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, control: Control, motion: Motion) -> Result<()> {
        if control.dim() != self.control_dim {
            return Err(Error::invalid(format!(
                "control has dimension {}, dataset holds {}",
                control.dim(),
                self.control_dim
            )));
        }
        if !control.is_finite() || motion.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite training pair"));
        }
        self.pairs.push_back((control, motion));
        self.evict();
        Ok(())
    }

    fn evict(&mut self) {
        if let Some(cap) = self.capacity {
            while self.pairs.len() > cap {
                self.pairs.pop_front();
            }
        }
    }

    pub fn pairs(&self) -> impl ExactSizeIterator<Item = &(Control, Motion)> {
        self.pairs.iter()
    }

    pub fn control(&self, i: usize) -> &Control {
        &self.pairs[i].0
    }

    pub fn motion(&self, i: usize) -> &Motion {
        &self.pairs[i].1
    }

    fn control_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.control_dim, |i, j| self.pairs[i].0.as_slice()[j])
    }

    fn motion_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |i, j| self.pairs[i].1[j])
    }

    /// Line-oriented text: a schema line, `control_dim <C> count <n>`, then
    /// one whitespace-separated record of `C + 3` decimals per pair.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{DATASET_HEADER}");
        let _ = writeln!(out, "control_dim {} count {}", self.control_dim, self.len());
        for (u, dz) in &self.pairs {
            let fields: Vec<String> = u
                .as_slice()
                .iter()
                .chain(dz.iter())
                .map(|v| format!("{v:?}"))
                .collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, l)) if l == DATASET_HEADER => {}
            Some((n, l)) => return Err(Error::parse(n, format!("expected `{DATASET_HEADER}`, found `{l}`"))),
            None => return Err(Error::parse(1, "empty dataset file")),
        }
        let (n, header) = lines.next().ok_or_else(|| Error::parse(2, "missing count line"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let (dim, count) = match tokens.as_slice() {
            ["control_dim", c, "count", k] => (
                c.parse::<usize>().map_err(|e| Error::parse(n, e.to_string()))?,
                k.parse::<usize>().map_err(|e| Error::parse(n, e.to_string()))?,
            ),
            _ => return Err(Error::parse(n, format!("malformed header `{header}`"))),
        };
        if dim == 0 {
            return Err(Error::parse(n, "control_dim must be positive"));
        }
        let mut ds = Dataset::new(dim);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(n, e.to_string()))?;
            if values.len() != dim + 3 {
                return Err(Error::parse(n, format!("expected {} fields, found {}", dim + 3, values.len())));
            }
            let motion = Vector3::new(values[dim], values[dim + 1], values[dim + 2]);
            ds.push(Control::new(values[..dim].to_vec()), motion)
                .map_err(|e| Error::parse(n, e.to_string()))?;
        }
        if ds.len() != count {
            return Err(Error::parse(0, format!("header declares {count} records, found {}", ds.len())));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Kernel settings for the two models. Unset length scales are derived
/// from the data: the exploration range for the forward model, the
/// largest observed motion norm for the inverse model. The default jitter
/// doubles as the observation noise variance of a motion sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    pub forward_length_scale: Option<f64>,
    pub inverse_length_scale: Option<f64>,
    pub jitter: f64,
    pub max_jitter_retries: usize,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings {
            forward_length_scale: None,
            inverse_length_scale: None,
            jitter: 1e-2,
            max_jitter_retries: DEFAULT_MAX_JITTER_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    /// Random actions for an initial identification (`d`).
    pub random_actions: usize,
    /// Density-guided actions for an initial identification (`a`).
    pub selected_actions: usize,
    /// Density-guided actions per model update (`b`).
    pub adapting_actions: usize,
    /// Half-width of the uniform sampling box for random controls.
    pub exploration_range: f64,
    pub control_dim: usize,
    /// Optional FIFO cap on the dataset size.
    pub capacity: Option<usize>,
    pub gp: GpSettings,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        let (d, a) = split_initial_actions(20);
        ExplorationConfig {
            random_actions: d,
            selected_actions: a,
            adapting_actions: 3,
            exploration_range: 1.0,
            control_dim: 2,
            capacity: None,
            gp: GpSettings::default(),
        }
    }
}

/// Splits a total initial action budget into `(random, selected)`: one third
/// random (at least two), the rest density-guided.
pub fn split_initial_actions(total: usize) -> (usize, usize) {
    let d = (total / 3).max(2).min(total);
    (d, total - d)
}

impl ExplorationConfig {
    pub fn with_initial_actions(mut self, total: usize) -> Self {
        let (d, a) = split_initial_actions(total);
        self.random_actions = d;
        self.selected_actions = a;
        self
    }

    pub fn initial_actions(&self) -> usize {
        self.random_actions + self.selected_actions
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_dim == 0 {
            return Err(Error::invalid("control_dim must be positive"));
        }
        if !(self.exploration_range >= 0.0 && self.exploration_range.is_finite()) {
            return Err(Error::invalid("exploration_range must be finite and non-negative"));
        }
        if self.capacity == Some(0) {
            return Err(Error::invalid("dataset capacity must be positive"));
        }
        if !(self.gp.jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }

    fn forward_params(&self) -> Result<KernelParams> {
        let l = self.gp.forward_length_scale.unwrap_or(self.exploration_range);
        KernelParams::new(if l > 0.0 { l } else { 1.0 }, self.gp.jitter)
    }

    fn inverse_params(&self, dataset: &Dataset) -> Result<KernelParams> {
        let l = match self.gp.inverse_length_scale {
            Some(l) => l,
            None => dataset.pairs().map(|(_, dz)| dz.norm()).fold(0.0, f64::max),
        };
        KernelParams::new(if l > 0.0 { l } else { 1.0 }, self.gp.jitter)
    }
}

/// One direction of the manipulation model.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Gp(GpModel),
    /// Exact linear map `y = M x`; used for ideal-model experiments.
    Linear(DMatrix<f64>),
}

impl Regressor {
    pub fn input_dim(&self) -> usize {
        match self {
            Regressor::Gp(m) => m.input_dim(),
            Regressor::Linear(m) => m.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Regressor::Gp(m) => m.output_dim(),
            Regressor::Linear(m) => m.nrows(),
        }
    }

    pub fn as_gp(&self) -> Option<&GpModel> {
        match self {
            Regressor::Gp(m) => Some(m),
            Regressor::Linear(_) => None,
        }
    }

    /// Largest input norm seen in training; `None` for exact linear maps,
    /// which are valid everywhere.
    pub fn input_reach(&self) -> Option<f64> {
        match self {
            Regressor::Gp(m) => Some(m.inputs().row_iter().map(|r| r.norm()).fold(0.0, f64::max)),
            Regressor::Linear(_) => None,
        }
    }

    fn predict(&self, x: &[f64]) -> nalgebra::DVector<f64> {
        match self {
            Regressor::Gp(m) => m.predict_unchecked(x),
            Regressor::Linear(m) => m * nalgebra::DVector::from_column_slice(x),
        }
    }
}

/// Forward (control to motion) and inverse (motion to control) models
/// fitted to the same dataset. No consistency between them is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationModels {
    pub forward: Regressor,
    pub inverse: Regressor,
    pub source_dataset_size: usize,
}

impl ManipulationModels {
    pub fn fit(dataset: &Dataset, config: &ExplorationConfig) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::invalid("cannot fit models to an empty dataset"));
        }
        let retries = config.gp.max_jitter_retries;
        let controls = dataset.control_matrix();
        let motions = dataset.motion_matrix();
        let forward = GpModel::fit_with_retries(controls.clone(), motions.clone(), config.forward_params()?, retries)?;
        let inverse = GpModel::fit_with_retries(motions, controls, config.inverse_params(dataset)?, retries)?;
        Ok(ManipulationModels {
            forward: Regressor::Gp(forward),
            inverse: Regressor::Gp(inverse),
            source_dataset_size: dataset.len(),
        })
    }

    /// Fits to `dataset`, reusing these models' factorisations when
    /// `dataset` only appends to the data they were fitted on and the kernel
    /// parameters a fresh fit would use are unchanged. Otherwise a full fit.
    pub fn refit(&self, dataset: &Dataset, config: &ExplorationConfig) -> Result<Self> {
        if let (Regressor::Gp(f), Regressor::Gp(i)) = (&self.forward, &self.inverse) {
            let n = f.len();
            let appended = n == i.len()
                && n < dataset.len()
                && f.input_dim() == dataset.control_dim()
                && (0..n).all(|r| f.inputs().row(r).iter().eq(dataset.control(r).as_slice().iter()));
            if appended && *f.params() == config.forward_params()? && *i.params() == config.inverse_params(dataset)? {
                let controls = dataset.control_matrix().rows(n, dataset.len() - n).into_owned();
                let motions = dataset.motion_matrix().rows(n, dataset.len() - n).into_owned();
                if let (Some(forward), Some(inverse)) = (f.extended(&controls, &motions), i.extended(&motions, &controls)) {
                    return Ok(ManipulationModels {
                        forward: Regressor::Gp(forward),
                        inverse: Regressor::Gp(inverse),
                        source_dataset_size: dataset.len(),
                    });
                }
            }
        }
        Self::fit(dataset, config)
    }

    pub fn from_parts(forward: Regressor, inverse: Regressor) -> Result<Self> {
        if forward.output_dim() != 3 || inverse.input_dim() != 3 || forward.input_dim() != inverse.output_dim() {
            return Err(Error::invalid("forward must map C->3 and inverse 3->C"));
        }
        let n = forward.as_gp().map_or(0, GpModel::len);
        Ok(ManipulationModels {
            forward,
            inverse,
            source_dataset_size: n,
        })
    }

    /// Exact models of `dz = A u`: forward `A`, inverse the pseudo-inverse of `A`.
    pub fn exact_linear(jacobian: &DMatrix<f64>) -> Result<Self> {
        if jacobian.nrows() != 3 {
            return Err(Error::invalid("jacobian must have three rows"));
        }
        let pinv = jacobian
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_parts(Regressor::Linear(jacobian.clone()), Regressor::Linear(pinv))
    }

    pub fn control_dim(&self) -> usize {
        self.forward.input_dim()
    }

    /// Predicted motion for a control.
    pub fn predict_motion(&self, u: &Control) -> Motion {
        let y = self.forward.predict(u.as_slice());
        Vector3::new(y[0], y[1], y[2])
    }

    /// Control predicted to produce the desired motion.
    pub fn predict_control(&self, motion: &Motion) -> Control {
        Control::from_vector(self.inverse.predict(motion.as_slice()))
    }

    /// Largest motion the inverse model was trained on, if it is bounded.
    pub fn motion_reach(&self) -> Option<f64> {
        self.inverse.input_reach()
    }
}

/// Uniform sample from `[-range, range]^C`.
pub fn random_control(config: &ExplorationConfig, rng: &mut impl Rng) -> Control {
    let r = config.exploration_range;
    if r == 0.0 {
        return Control::zeros(config.control_dim);
    }
    Control::new((0..config.control_dim).map(|_| rng.random_range(-r..=r)).collect())
}

/// Reciprocal of the distance from motion `i` to its nearest other motion.
/// Exact duplicates give `f64::INFINITY`.
pub fn local_density(dataset: &Dataset, i: usize) -> Result<f64> {
    if dataset.len() < 2 {
        return Err(Error::invalid("local density needs at least two samples"));
    }
    if i >= dataset.len() {
        return Err(Error::invalid(format!("index {i} out of range for {} samples", dataset.len())));
    }
    let (_, d) = nearest_neighbor(dataset, i);
    Ok(1.0 / d)
}

/// Lowest-index nearest neighbour of sample `i` in motion space.
fn nearest_neighbor(dataset: &Dataset, i: usize) -> (usize, f64) {
    let zi = dataset.motion(i);
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..dataset.len() {
        if j == i {
            continue;
        }
        let d = (zi - dataset.motion(j)).norm();
        if d < best.1 || best.0 == usize::MAX {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Midpoint of the controls at `lowest` (sparsest motion) and `neighbor`.
    Midpoint {
        lowest: usize,
        neighbor: usize,
        control: Control,
    },
    /// Every motion has an exact duplicate; no density is finite.
    AllDuplicates,
}

/// Density-guided exploratory control. Ties go to the lowest index;
/// samples with an exact duplicate motion are never chosen as the sparsest.
pub fn select_exploratory_control(dataset: &Dataset) -> Result<Selection> {
    if dataset.len() < 2 {
        return Err(Error::invalid("exploratory selection needs at least two samples"));
    }
    let mut lowest: Option<(usize, f64)> = None;
    for i in 0..dataset.len() {
        let (_, d) = nearest_neighbor(dataset, i);
        let rho = 1.0 / d;
        if rho.is_infinite() {
            continue;
        }
        if lowest.is_none_or(|(_, best)| rho < best) {
            lowest = Some((i, rho));
        }
    }
    let Some((p, _)) = lowest else {
        return Ok(Selection::AllDuplicates);
    };
    let (q, _) = nearest_neighbor(dataset, p);
    Ok(Selection::Midpoint {
        lowest: p,
        neighbor: q,
        control: Control::midpoint(dataset.control(p), dataset.control(q)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentifyMode {
    Initial,
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    Random,
    Selected,
    /// Uniform control used because every motion was duplicated.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutedAction {
    pub kind: ActionKind,
    pub control: Control,
    pub motion: Motion,
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub models: ManipulationModels,
    pub dataset: Dataset,
    pub actions: Vec<ExecutedAction>,
}

/// Runs exploratory actions on `plant`, extends `dataset`, and refits both models.
///
/// Errors after at least one action carry the executed actions in
/// [`Error::Identification`].
pub fn self_identify<P: Plant + ?Sized>(
    plant: &mut P,
    config: &ExplorationConfig,
    dataset: Dataset,
    mode: IdentifyMode,
    rng: &mut impl Rng,
) -> Result<Identification> {
    self_identify_from(plant, config, dataset, None, mode, rng)
}

/// [`self_identify`] given the models currently fitted to `dataset`, which
/// lets the refit extend them instead of starting over.
pub fn self_identify_from<P: Plant + ?Sized>(
    plant: &mut P,
    config: &ExplorationConfig,
    mut dataset: Dataset,
    current: Option<&ManipulationModels>,
    mode: IdentifyMode,
    rng: &mut impl Rng,
) -> Result<Identification> {
    config.validate()?;
    if dataset.control_dim() != config.control_dim || plant.control_dim() != config.control_dim {
        return Err(Error::invalid("control dimension mismatch between plant, dataset and config"));
    }
    let (random, selected) = match mode {
        IdentifyMode::Initial => (config.random_actions, config.selected_actions),
        IdentifyMode::Adapt => (0, config.adapting_actions),
    };
    if dataset.len() + random < 2 && selected > 0 {
        return Err(Error::invalid("density-guided actions need at least two samples"));
    }
    if dataset.len() + random + selected == 0 {
        return Err(Error::invalid("identification would leave the dataset empty"));
    }

    let mut actions = Vec::with_capacity(random + selected);
    let attach = |e: Error, actions: &Vec<ExecutedAction>| {
        if actions.is_empty() {
            e
        } else {
            Error::Identification {
                source: Box::new(e),
                executed: actions.clone(),
            }
        }
    };

    let mut z_prev = plant.observe();
    for k in 0..random + selected {
        let (kind, control) = if k < random {
            (ActionKind::Random, random_control(config, rng))
        } else {
            match select_exploratory_control(&dataset).map_err(|e| attach(e, &actions))? {
                Selection::Midpoint { control, .. } => (ActionKind::Selected, control),
                Selection::AllDuplicates => (ActionKind::Fallback, random_control(config, rng)),
            }
        };
        let z = plant.execute(&control).map_err(|e| attach(e, &actions))?;
        let motion = z - z_prev;
        z_prev = z;
        dataset
            .push(control.clone(), motion)
            .map_err(|e| attach(e, &actions))?;
        actions.push(ExecutedAction { kind, control, motion });
    }

    let models = match current {
        Some(m) => m.refit(&dataset, config),
        None => ManipulationModels::fit(&dataset, config),
    }
    .map_err(|e| attach(e, &actions))?;
    Ok(Identification {
        models,
        dataset,
        actions,
    })
}

/// Fits models to a dataset recorded on another setup, unchanged.
pub fn transfer_models(saved: &Dataset, config: &ExplorationConfig) -> Result<(ManipulationModels, Dataset)> {
    if saved.is_empty() {
        return Err(Error::invalid("cannot transfer from an empty dataset"));
    }
    if saved.control_dim() != config.control_dim {
        return Err(Error::invalid(format!(
            "saved dataset has control dimension {}, config expects {}",
            saved.control_dim(),
            config.control_dim
        )));
    }
    let mut dataset = saved.clone();
    dataset.set_capacity(config.capacity);
    let models = ManipulationModels::fit(&dataset, config)?;
    Ok((models, dataset))
}
