//! Synthetic hand-object plant.
//!
//! The controller never sees the hidden state. A step maps a control `u` to
//! a POM displacement
//!
//! ```text
//! dz = J(h) u + g q(u)
//! J(h) = Rz(theta(h)) S(h)
//! S(h)[r][c] = B[r][c] * (1 + m tanh(p_rc . (h - h0)))
//! theta(h) = theta_max * tanh(t . (h - h0))
//! h <- h + drift_rate * R u
//! ```
//!
//! where `B` is the preset's base Jacobian, `h0` the hidden state drawn at
//! reset, `g` the nonlinearity gain, `m` the modulation depth, `Rz` a turn
//! about the vertical axis, and `q`, `p_rc`, `t`, `R` fixed maps defined
//! below. The hidden state follows the accumulated control, so the Jacobian
//! changes as the object is moved away from where it was grasped. The
//! observed position is the true POM plus independent Gaussian noise (planar
//! presets keep the third coordinate noise-free and pinned).

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Control, Point3};

/// Bound `c` such that `|q(u)| <= c |u|^2` for the fixed quadratic `q`.
pub const QUADRATIC_BOUND: f64 = 1.15;

/// Anything that can execute a control and report the POM position.
pub trait Plant {
    fn control_dim(&self) -> usize;

    /// Current observed POM position.
    fn observe(&self) -> Point3;

    /// Executes `u` and returns the new observed POM position.
    fn execute(&mut self, u: &Control) -> Result<Point3>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantPreset {
    pub name: String,
    /// Three rows of `C` entries, mm per control unit.
    pub base_jacobian: Vec<Vec<f64>>,
    pub nonlinearity_gain: f64,
    pub drift_rate: f64,
    pub noise_std: f64,
    #[serde(default = "default_planar")]
    pub planar: bool,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub origin: [f64; 3],
}

fn default_planar() -> bool {
    true
}

fn default_hidden_dim() -> usize {
    4
}

/// Largest relative change of a Jacobian entry under the hidden state.
pub const MODULATION_DEPTH: f64 = 0.5;

/// Largest turn of the Jacobian about the vertical axis, rad.
pub const MAX_ROTATION: f64 = 0.4 * std::f64::consts::PI;

/// Observation noise used by the built-in presets, mm.
pub const DEFAULT_NOISE_STD: f64 = 0.05;

impl PlantPreset {
    pub fn control_dim(&self) -> usize {
        self.base_jacobian.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_jacobian.len() != 3 {
            return Err(Error::Config(format!(
                "preset {}: base_jacobian needs 3 rows, got {}",
                self.name,
                self.base_jacobian.len()
            )));
        }
        let c = self.control_dim();
        if c == 0 || self.base_jacobian.iter().any(|r| r.len() != c) {
            return Err(Error::Config(format!(
                "preset {}: base_jacobian rows must share a positive length",
                self.name
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config(format!("preset {}: hidden_dim must be positive", self.name)));
        }
        let scalars = [self.nonlinearity_gain, self.drift_rate, self.noise_std];
        if scalars.iter().chain(self.base_jacobian.iter().flatten()).chain(self.origin.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("preset {}: non-finite parameter", self.name)));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config(format!("preset {}: noise_std must be >= 0", self.name)));
        }
        if self.planar && self.base_jacobian[2].iter().any(|v| *v != 0.0) {
            return Err(Error::Config(format!(
                "preset {}: planar presets need a zero third Jacobian row",
                self.name
            )));
        }
        Ok(())
    }

    pub fn base_jacobian_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3, self.control_dim(), |r, c| self.base_jacobian[r][c])
    }

    pub fn origin(&self) -> Point3 {
        Vector3::from(self.origin)
    }

    /// Same preset with every stochastic and nonlinear term switched off.
    pub fn idealized(&self) -> Self {
        PlantPreset {
            nonlinearity_gain: 0.0,
            drift_rate: 0.0,
            noise_std: 0.0,
            ..self.clone()
        }
    }

    fn planar_two_dof(name: &str, rows: [[f64; 2]; 2], gain: f64, drift: f64) -> Self {
        PlantPreset {
            name: name.to_string(),
            base_jacobian: vec![rows[0].to_vec(), rows[1].to_vec(), vec![0.0, 0.0]],
            nonlinearity_gain: gain,
            drift_rate: drift,
            noise_std: DEFAULT_NOISE_STD,
            planar: true,
            hidden_dim: 4,
            origin: [0.0; 3],
        }
    }
}

/// Names of the built-in presets, in order.
pub const BUILTIN_PRESETS: [&str; 6] = ["preset-1", "preset-2", "preset-3", "preset-4", "preset-5", "drifting"];

/// The near-linear preset used by default in sweeps.
pub const DEFAULT_PRESET: &str = "preset-4";

/// Built-in presets. `preset-1`..`preset-5` stand in for five grasped objects
/// with related but distinct dynamics; `drifting` is `preset-4` with a hidden
/// state that drifts quickly under use.
pub fn builtin_preset(name: &str) -> Option<PlantPreset> {
    let p = match name {
        "preset-1" => PlantPreset::planar_two_dof(name, [[2.00, -0.50], [0.40, 1.80]], 0.04, 0.002),
        "preset-2" => PlantPreset::planar_two_dof(name, [[2.50, -0.90], [0.70, 2.20]], 0.06, 0.002),
        "preset-3" => PlantPreset::planar_two_dof(name, [[2.10, -1.10], [0.30, 1.70]], 0.05, 0.003),
        "preset-4" => PlantPreset::planar_two_dof(name, [[2.20, -0.70], [0.50, 2.00]], 0.03, 0.001),
        "preset-5" => PlantPreset::planar_two_dof(name, [[2.40, -0.40], [0.80, 1.90]], 0.05, 0.002),
        "drifting" => PlantPreset::planar_two_dof(name, [[2.20, -0.70], [0.50, 2.00]], 0.03, 0.1),
        _ => return None,
    };
    Some(p)
}

#[derive(Debug, Deserialize, Serialize)]
struct PresetFile {
    preset: Vec<PlantPreset>,
}

/// Parses `[[preset]]` tables from TOML text.
pub fn parse_presets(text: &str) -> Result<Vec<PlantPreset>> {
    let file: PresetFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for p in &file.preset {
        p.validate()?;
    }
    Ok(file.preset)
}

pub fn load_presets(path: &Path) -> Result<Vec<PlantPreset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_presets(&text)
}

pub fn presets_to_toml(presets: &[PlantPreset]) -> Result<String> {
    toml::to_string(&PresetFile {
        preset: presets.to_vec(),
    })
    .map_err(|e| Error::Config(e.to_string()))
}

/// Hidden ground truth of the synthetic plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub hidden: DVector<f64>,
    /// Hidden state at reset; the Jacobian equals the base Jacobian here.
    pub hidden_at_reset: DVector<f64>,
    pub pom: Point3,
    pub step_count: u64,
}

impl PlantState {
    /// Draws `0.1 * N(0, 1)` hidden components and places the POM at the origin.
    pub fn reset(preset: &PlantPreset, rng: &mut impl rand::Rng) -> Self {
        let hidden = DVector::from_fn(preset.hidden_dim, |_, _| {
            0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        });
        PlantState {
            hidden_at_reset: hidden.clone(),
            hidden,
            pom: preset.origin(),
            step_count: 0,
        }
    }

    /// Jacobian at the current hidden state.
    pub fn jacobian(&self, preset: &PlantPreset) -> DMatrix<f64> {
        let c = preset.control_dim();
        let offset = &self.hidden - &self.hidden_at_reset;
        let scaled = DMatrix::from_fn(3, c, |r, col| {
            let proj: f64 = offset
                .iter()
                .enumerate()
                .map(|(n, h)| modulation_weight(r, col, n, c) * h)
                .sum();
            preset.base_jacobian[r][col] * (1.0 + MODULATION_DEPTH * proj.tanh())
        });
        let turn: f64 = offset.iter().enumerate().map(|(n, h)| rotation_weight(n) * h).sum();
        let theta = MAX_ROTATION * turn.tanh();
        let (sin, cos) = theta.sin_cos();
        let rot = nalgebra::Matrix3::new(cos, -sin, 0.0, sin, cos, 0.0, 0.0, 0.0, 1.0);
        DMatrix::from_fn(3, 3, |r, k| rot[(r, k)]) * scaled
    }

    /// Noise-free transition. Returns the next state and the true displacement.
    pub fn transition(&self, preset: &PlantPreset, u: &Control) -> (PlantState, Point3) {
        let jac = self.jacobian(preset);
        let lin = &jac * u.vector();
        let q = quadratic(u.as_slice(), preset.planar);
        let mut delta = Vector3::new(lin[0], lin[1], lin[2]) + preset.nonlinearity_gain * q;
        if preset.planar {
            delta.z = 0.0;
        }

        let hidden = DVector::from_fn(self.hidden.len(), |n, _| {
            let push: f64 = u.as_slice().iter().enumerate().map(|(c, v)| drift_weight(n, c) * v).sum();
            self.hidden[n] + preset.drift_rate * push
        });
        let mut pom = self.pom + delta;
        if preset.planar {
            pom.z = preset.origin[2];
        }
        (
            PlantState {
                hidden,
                hidden_at_reset: self.hidden_at_reset.clone(),
                pom,
                step_count: self.step_count + 1,
            },
            delta,
        )
    }

    /// One step including observation noise: returns the next state and the
    /// observed POM position.
    pub fn step(&self, preset: &PlantPreset, u: &Control, rng: &mut impl rand::Rng) -> (PlantState, Point3) {
        let (next, _) = self.transition(preset, u);
        let observed = observe_with_noise(&next.pom, preset, rng);
        (next, observed)
    }
}

fn observe_with_noise(pom: &Point3, preset: &PlantPreset, rng: &mut impl rand::Rng) -> Point3 {
    if preset.noise_std == 0.0 {
        return *pom;
    }
    let normal = Normal::new(0.0, preset.noise_std).expect("validated noise_std");
    let mut z = *pom;
    z.x += normal.sample(rng);
    z.y += normal.sample(rng);
    if !preset.planar {
        z.z += normal.sample(rng);
    }
    z
}

/// Fixed projection weights coupling hidden component `n` to Jacobian entry `(r, c)`.
fn modulation_weight(r: usize, c: usize, n: usize, control_dim: usize) -> f64 {
    (1.7 * (r * control_dim + c) as f64 + 2.3 * n as f64 + 0.5).cos()
}

/// Fixed weights of the hidden-state projection that turns the Jacobian.
fn rotation_weight(n: usize) -> f64 {
    (1.1 * n as f64 + 0.7).sin()
}

/// Fixed weights of the hidden-state response to control component `c`.
fn drift_weight(n: usize, c: usize) -> f64 {
    (0.9 * n as f64 + 1.3 * c as f64 + 0.4).cos()
}

/// Fixed smooth quadratic with `q(0) = 0` and `|q(u)| <= QUADRATIC_BOUND |u|^2`.
fn quadratic(u: &[f64], planar: bool) -> Vector3<f64> {
    let c = u.len();
    let sq: f64 = u.iter().map(|v| v * v).sum();
    let x = u[0] * u[0] - 0.5 * u[1..].iter().map(|v| v * v).sum::<f64>();
    let y = 0.5 * (0..c).map(|i| u[i] * u[(i + 1) % c]).sum::<f64>();
    let z = if planar { 0.0 } else { 0.25 * sq };
    Vector3::new(x, y, z)
}

/// A stateful plant instance: preset, hidden state and a private noise stream.
#[derive(Debug, Clone)]
pub struct SyntheticPlant {
    preset: PlantPreset,
    state: PlantState,
    observed: Point3,
    rng: ChaCha8Rng,
    executions: usize,
}

impl SyntheticPlant {
    pub fn reset(preset: PlantPreset, seed: u64) -> Result<Self> {
        preset.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = PlantState::reset(&preset, &mut rng);
        let observed = state.pom;
        Ok(SyntheticPlant {
            preset,
            state,
            observed,
            rng,
            executions: 0,
        })
    }

    pub fn preset(&self) -> &PlantPreset {
        &self.preset
    }

    /// Number of controls executed since reset.
    pub fn executions(&self) -> usize {
        self.executions
    }

    /// Hidden ground truth. Test and diagnostics use only; controllers must
    /// work from `observe`.
    #[doc(hidden)]
    pub fn debug_state(&self) -> &PlantState {
        &self.state
    }

    #[doc(hidden)]
    pub fn debug_jacobian(&self) -> DMatrix<f64> {
        self.state.jacobian(&self.preset)
    }
}

impl Plant for SyntheticPlant {
    fn control_dim(&self) -> usize {
        self.preset.control_dim()
    }

    fn observe(&self) -> Point3 {
        self.observed
    }

    fn execute(&mut self, u: &Control) -> Result<Point3> {
        if u.dim() != self.control_dim() {
            return Err(Error::Plant(format!(
                "control has dimension {}, plant expects {}",
                u.dim(),
                self.control_dim()
            )));
        }
        if !u.is_finite() {
            return Err(Error::Plant(format!("non-finite control {u}")));
        }
        let (next, observed) = self.state.step(&self.preset, u, &mut self.rng);
        self.state = next;
        self.observed = observed;
        self.executions += 1;
        Ok(observed)
    }
}
