//! Self-identified manipulation models and MPC trajectory tracing.
//!
//! A plant is probed with a handful of exploratory controls; Gaussian
//! process regression turns the observed `(control, motion)` pairs into a
//! forward model (control to motion) and an inverse model (motion to
//! control). A random-shooting MPC uses both to trace a reference
//! trajectory keypoint by keypoint, and the models are refreshed with a few
//! more exploratory controls whenever the tracking error grows too large.
//!
//! The [`plant`] module provides a synthetic drifting hand-object system and
//! [`harness`] runs seeded experiment sweeps over it.

pub mod error;
pub mod gp;
pub mod harness;
pub mod identification;
pub mod manipulation;
pub mod mpc;
pub mod plant;
pub mod types;

pub use error::{Error, Result};
pub use gp::{rbf_kernel, GpModel, KernelParams};
pub use identification::{
    local_density, random_control, select_exploratory_control, self_identify, self_identify_from, transfer_models, Dataset,
    ExplorationConfig, GpSettings, IdentifyMode, ManipulationModels, Regressor, Selection,
};
pub use manipulation::{
    manipulation_error, run_task, run_task_observed, trace_metrics, LoopConfig, ReferenceTrajectory, StepRecord,
    TaskLog, TaskResult, TraceSummary,
};
pub use mpc::{
    interpolate, mpc_step, nearest_waypoint, plan, prediction_horizon, rollout, IntermediateTrajectory, MpcConfig, MpcPlan,
    Rollout,
};
pub use plant::{builtin_preset, Plant, PlantPreset, SyntheticPlant};
pub use types::{Control, Motion, Point3};
