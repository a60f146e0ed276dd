//! Random-shooting MPC over the self-identified models.
//!
//! Between the last reached keypoint and the target keypoint the planner
//! lays out evenly spaced waypoints, finds the waypoint nearest to the
//! current POM, and simulates `Q` rollouts of up to `K` steps. Rollout step
//! `k` asks the inverse model for the motion to the *next* waypoint (clamped
//! to the motions the model was trained on), adds `N(0, sigma I)` control
//! noise, and advances the predicted state with the forward model. The first control of the cheapest rollout is returned.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::ManipulationModels;
use crate::types::{Control, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Maximum prediction horizon `K`.
    pub horizon: usize,
    /// Number of simulated rollouts `Q`.
    pub rollouts: usize,
    /// Variance of the control perturbation.
    pub sigma: f64,
    /// Maximum distance between interpolated waypoints, mm.
    pub waypoint_spacing: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 5,
            rollouts: 50,
            sigma: 0.1,
            waypoint_spacing: 0.5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.rollouts == 0 {
            return Err(Error::invalid("horizon and rollouts must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be finite and non-negative"));
        }
        if !(self.waypoint_spacing > 0.0 && self.waypoint_spacing.is_finite()) {
            return Err(Error::invalid("waypoint_spacing must be positive"));
        }
        Ok(())
    }
}

/// Evenly spaced waypoints from one keypoint to the next, both included.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateTrajectory {
    waypoints: Vec<Point3>,
}

impl IntermediateTrajectory {
    pub fn waypoints(&self) -> &[Point3] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start(&self) -> &Point3 {
        &self.waypoints[0]
    }

    pub fn end(&self) -> &Point3 {
        &self.waypoints[self.waypoints.len() - 1]
    }

    /// Index of the waypoint closest to `z`; ties go to the later waypoint.
    pub fn nearest(&self, z: &Point3) -> usize {
        nearest_waypoint(self, z)
    }
}

/// `M = max(2, ceil(|x_next - x_prev| / spacing) + 1)` evenly spaced points.
pub fn interpolate(x_prev: &Point3, x_next: &Point3, spacing: f64) -> Result<IntermediateTrajectory> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!("waypoint spacing must be positive, got {spacing}")));
    }
    let length = (x_next - x_prev).norm();
    let m = ((length / spacing).ceil() as usize + 1).max(2);
    let mut waypoints: Vec<Point3> = (0..m)
        .map(|i| x_prev + (x_next - x_prev) * (i as f64 / (m - 1) as f64))
        .collect();
    waypoints[m - 1] = *x_next;
    Ok(IntermediateTrajectory { waypoints })
}

pub fn nearest_waypoint(traj: &IntermediateTrajectory, z: &Point3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, w) in traj.waypoints.iter().enumerate() {
        let d = (z - w).norm();
        if d <= best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// `L = min(K, M - 1 - j)` for a zero-based nearest index `j`.
pub fn prediction_horizon(max_horizon: usize, traj: &IntermediateTrajectory, nearest: usize) -> usize {
    max_horizon.min(traj.len() - 1 - nearest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `L` predicted controls.
    pub controls: Vec<Control>,
    /// `L + 1` predicted states starting at the observed POM.
    pub states: Vec<Point3>,
    pub cost: f64,
}

/// Draws `xi ~ N(0, sigma I_dim)`, `sigma` being the variance.
pub fn sample_perturbation(dim: usize, sigma: f64, rng: &mut impl Rng) -> DVector<f64> {
    if sigma == 0.0 {
        return DVector::zeros(dim);
    }
    let normal = Normal::new(0.0, sigma.sqrt()).expect("sigma validated");
    DVector::from_fn(dim, |_, _| normal.sample(rng))
}

/// Simulates one `steps`-long rollout from `z_t`. The cost sums the
/// distance of each predicted state `k = 0..=steps` to waypoint `nearest + k`.
pub fn rollout(
    models: &ManipulationModels,
    traj: &IntermediateTrajectory,
    nearest: usize,
    z_t: &Point3,
    steps: usize,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    if nearest >= traj.len() || nearest + steps >= traj.len() {
        return Err(Error::invalid(format!(
            "rollout of {steps} steps from waypoint {nearest} overruns {} waypoints",
            traj.len()
        )));
    }
    let w = traj.waypoints();
    let dim = models.control_dim();
    let mut controls = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(*z_t);
    let mut cost = (z_t - w[nearest]).norm();
    for k in 0..steps {
        let z_k = states[k];
        let desired = clamp_motion(w[nearest + k + 1] - z_k, models.motion_reach());
        let u = Control::from_vector(models.predict_control(&desired).vector() + sample_perturbation(dim, sigma, rng));
        let z_next = z_k + models.predict_motion(&u);
        cost += (z_next - w[nearest + k + 1]).norm();
        controls.push(u);
        states.push(z_next);
    }
    Ok(Rollout { controls, states, cost })
}

/// Shortens `desired` to at most `reach`, keeping its direction. A zero-mean
/// GP inverse model answers motions beyond its training data with controls
/// close to zero, so far-off targets are requested at the largest motion
/// the data supports.
pub fn clamp_motion(desired: Point3, reach: Option<f64>) -> Point3 {
    match reach {
        Some(r) if r > 0.0 && desired.norm() > r => desired * (r / desired.norm()),
        _ => desired,
    }
}

/// Everything the planner computed for one step.
#[derive(Debug, Clone)]
pub struct MpcPlan {
    pub control: Control,
    pub nearest: usize,
    pub horizon: usize,
    /// Index of the selected rollout; `None` when the horizon is zero.
    pub best: Option<usize>,
    pub rollouts: Vec<Rollout>,
}

impl MpcPlan {
    /// The nearest waypoint is the segment end, so there is nothing to plan.
    pub fn at_final_waypoint(&self) -> bool {
        self.horizon == 0
    }
}

/// Plans over an already interpolated segment. Rollout `q` draws its noise
/// from a ChaCha8 stream `q` keyed by `step_seed`, so the result does not
/// depend on evaluation order.
pub fn plan(
    models: &ManipulationModels,
    z_t: &Point3,
    traj: &IntermediateTrajectory,
    config: &MpcConfig,
    step_seed: u64,
) -> Result<MpcPlan> {
    config.validate()?;
    let nearest = nearest_waypoint(traj, z_t);
    let horizon = prediction_horizon(config.horizon, traj, nearest);
    if horizon == 0 {
        return Ok(MpcPlan {
            control: Control::zeros(models.control_dim()),
            nearest,
            horizon,
            best: None,
            rollouts: Vec::new(),
        });
    }
    let rollouts = (0..config.rollouts)
        .map(|q| {
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            rng.set_stream(q as u64);
            rollout(models, traj, nearest, z_t, horizon, config.sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (q, r) in rollouts.iter().enumerate() {
        if r.cost < rollouts[best].cost {
            best = q;
        }
    }
    Ok(MpcPlan {
        control: rollouts[best].controls[0].clone(),
        nearest,
        horizon,
        best: Some(best),
        rollouts,
    })
}

/// One MPC step on the segment `x_prev -> x_next`. Returns the zero control
/// when the POM is nearest to the segment end.
pub fn mpc_step(
    models: &ManipulationModels,
    z_t: &Point3,
    x_prev: &Point3,
    x_next: &Point3,
    config: &MpcConfig,
    rng: &mut impl RngCore,
) -> Result<Control> {
    let traj = interpolate(x_prev, x_next, config.waypoint_spacing)?;
    Ok(plan(models, z_t, &traj, config, rng.next_u64())?.control)
}

/// Writes one record per rollout: `step,q,cost,selected,states` where
/// states are `x y z` triples joined by `;`.
pub fn write_rollout_records<W: Write>(out: &mut W, step: usize, plan: &MpcPlan) -> std::io::Result<()> {
    for (q, r) in plan.rollouts.iter().enumerate() {
        let states: Vec<String> = r
            .states
            .iter()
            .map(|s| format!("{:?} {:?} {:?}", s.x, s.y, s.z))
            .collect();
        writeln!(
            out,
            "{},{},{:?},{},{}",
            step,
            q,
            r.cost,
            u8::from(plan.best == Some(q)),
            states.join(";")
        )?;
    }
    Ok(())
}

pub const ROLLOUT_HEADER: &str = "# schema=1 kind=rollouts\nstep,q,cost,selected,states";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpModel, KernelParams};
    use crate::identification::Regressor;
    use nalgebra::{DMatrix, Vector3};

    /// GP fit of a linear map on a grid.
    fn smooth_models() -> ManipulationModels {
        let jac = DMatrix::from_row_slice(3, 2, &[0.45, -0.15, 0.10, 0.40, 0.0, 0.0]);
        let mut us = Vec::new();
        let mut zs = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                let u = DVector::from_vec(vec![i as f64 / 3.0, j as f64 / 3.0]);
                let z = &jac * &u;
                us.push(u.as_slice().to_vec());
                zs.push(z.as_slice().to_vec());
            }
        }
        let f = GpModel::fit_rows(&us, &zs, KernelParams::new(0.5, 1e-8).unwrap()).unwrap();
        let g = GpModel::fit_rows(&zs, &us, KernelParams::new(0.3, 1e-8).unwrap()).unwrap();
        ManipulationModels::from_parts(Regressor::Gp(f), Regressor::Gp(g)).unwrap()
    }

    #[test]
    fn clamp_motion_keeps_direction() {
        let d = Vector3::new(3.0, 4.0, 0.0);
        assert_eq!(clamp_motion(d, None), d);
        assert_eq!(clamp_motion(d, Some(10.0)), d);
        assert_eq!(clamp_motion(d, Some(0.0)), d);
        let c = clamp_motion(d, Some(2.5));
        assert!((c - Vector3::new(1.5, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn interpolation_examples() {
        let o = Vector3::zeros();
        let t = interpolate(&o, &o, 1.0).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.waypoints()[0], t.waypoints()[1]);

        let t = interpolate(&o, &Vector3::new(4.0, 0.0, 0.0), 1.0).unwrap();
        let xs: Vec<f64> = t.waypoints().iter().map(|w| w.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

        let t = interpolate(&o, &Vector3::new(1.0, 1.0, 0.0), 0.5).unwrap();
        assert_eq!(t.len(), 4);
        let gap = (t.waypoints()[1] - t.waypoints()[0]).norm();
        assert!((gap - 2f64.sqrt() / 3.0).abs() < 1e-12);
        assert!((gap - 0.4714).abs() < 1e-4);
        assert!(interpolate(&o, &o, 0.0).is_err());
    }

    #[test]
    fn nearest_waypoint_examples() {
        let t = interpolate(&Vector3::zeros(), &Vector3::new(4.0, 0.0, 0.0), 1.0).unwrap();
        // Waypoint 3 of 5 (one-based) is index 2.
        assert_eq!(nearest_waypoint(&t, &Vector3::new(2.0, 0.0, 0.0)), 2);
        // Equidistant from one-based waypoints 2 and 3: the later wins.
        assert_eq!(nearest_waypoint(&t, &Vector3::new(1.5, 0.7, 0.0)), 2);
    }

    #[test]
    fn horizon_truncates_at_segment_end() {
        let t = interpolate(&Vector3::zeros(), &Vector3::new(4.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(prediction_horizon(5, &t, 0), 4);
        assert_eq!(prediction_horizon(2, &t, 0), 2);
        assert_eq!(prediction_horizon(5, &t, 4), 0);
    }

    #[test]
    fn zero_horizon_rollout_cost() {
        let m = smooth_models();
        let t = interpolate(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), 0.5).unwrap();
        let z = Vector3::new(1.0, 0.3, 0.0);
        let r = rollout(&m, &t, 2, &z, 0, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(r.controls.is_empty());
        assert!((r.cost - 0.3).abs() < 1e-12);
        assert!(rollout(&m, &t, 2, &z, 1, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn zero_sigma_is_deterministic() {
        let m = smooth_models();
        let t = interpolate(&Vector3::zeros(), &Vector3::new(3.0, 1.0, 0.0), 0.5).unwrap();
        let z = Vector3::new(0.1, -0.1, 0.0);
        let a = rollout(&m, &t, 0, &z, 5, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = rollout(&m, &t, 0, &z, 5, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        let cfg = MpcConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let p = plan(&m, &z, &t, &cfg, 99).unwrap();
        assert_eq!(p.best, Some(0));
        assert!(p.rollouts.iter().all(|r| r == &p.rollouts[0]));
    }

    #[test]
    fn single_greedy_rollout_matches_inverse() {
        let m = smooth_models();
        let z = Vector3::new(0.2, 0.1, 0.0);
        let x_prev = Vector3::zeros();
        let x_next = Vector3::new(2.0, 0.0, 0.0);
        let cfg = MpcConfig {
            rollouts: 1,
            sigma: 0.0,
            ..Default::default()
        };
        let u = mpc_step(&m, &z, &x_prev, &x_next, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = interpolate(&x_prev, &x_next, cfg.waypoint_spacing).unwrap();
        let j = nearest_waypoint(&t, &z);
        let expected = m.predict_control(&(t.waypoints()[j + 1] - z));
        assert_eq!(u, expected);
    }

    #[test]
    fn final_waypoint_returns_zero_control() {
        let m = smooth_models();
        let x_next = Vector3::new(2.0, 0.0, 0.0);
        let cfg = MpcConfig::default();
        let u = mpc_step(&m, &Vector3::new(2.6, 0.0, 0.0), &Vector3::zeros(), &x_next, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(u, Control::zeros(2));
    }

    #[test]
    fn perturbation_variance_is_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| sample_perturbation(2, 0.1, &mut rng)).collect();
        for c in 0..2 {
            let mean = draws.iter().map(|d| d[c]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var - 0.1).abs() <= 0.01, "variance {var}");
        }
    }

    #[test]
    fn selected_rollout_is_cheapest() {
        let m = smooth_models();
        let t = interpolate(&Vector3::zeros(), &Vector3::new(3.0, 2.0, 0.0), 0.5).unwrap();
        let z = Vector3::new(0.4, -0.3, 0.0);
        let p = plan(&m, &z, &t, &MpcConfig::default(), 5).unwrap();
        let best = p.best.unwrap();
        assert_eq!(p.rollouts.len(), 50);
        assert!(p.rollouts.iter().all(|r| p.rollouts[best].cost <= r.cost));
        assert!(p.rollouts[..best].iter().all(|r| r.cost > p.rollouts[best].cost));
        assert_eq!(p.control, p.rollouts[best].controls[0]);
        for r in &p.rollouts {
            assert_eq!(r.states.len(), p.horizon + 1);
            assert_eq!(r.controls.len(), p.horizon);
        }
    }

    #[test]
    fn rollout_dump_format() {
        let m = smooth_models();
        let t = interpolate(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0), 0.5).unwrap();
        let cfg = MpcConfig {
            rollouts: 2,
            ..Default::default()
        };
        let p = plan(&m, &Vector3::zeros(), &t, &cfg, 1).unwrap();
        let mut buf = Vec::new();
        write_rollout_records(&mut buf, 7, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("7,0,"));
        assert_eq!(lines[0].split(',').nth(4).unwrap().split(';').count(), p.horizon + 1);
    }
}
