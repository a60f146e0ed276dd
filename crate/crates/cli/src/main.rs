//! `selfid`: runs single tasks and seeded experiment sweeps on the synthetic
//! plant and turns their summaries into plot tables.
//!
//! Every tuning flag can also come from a TOML file given with `--config`;
//! keys use the flag names with `_` instead of `-`. Flags on the command line
//! win over the file. The output directory is taken from `--output`, then
//! `SELFID_OUTPUT_DIR`, then the file's `output` key.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selfid_core::harness::{
    emit_plotdata_file, run_experiment, ExperimentKind, ExperimentReport, ExperimentSpec, TrajectoryKind, DEFAULT_SCALE,
};
use selfid_core::plant::DEFAULT_PRESET;
use selfid_core::{builtin_preset, Error, LoopConfig, PlantPreset};
use serde::Deserialize;

const OUTPUT_ENV: &str = "SELFID_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "selfid-output";

/// Exit code when some runs of an experiment failed.
const PARTIAL_FAILURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "selfid", version, about = "Self-identified manipulation models on a synthetic hand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trace one trajectory per preset (default: square on preset-4).
    Run(ExperimentArgs),
    /// Sweep the total number of initial exploratory actions.
    SweepInitial(ExperimentArgs),
    /// Sweep the MPC control perturbation sigma.
    SweepSigma(ExperimentArgs),
    /// Identify on a source preset and reuse its dataset on target presets.
    Transfer(ExperimentArgs),
    /// Per-sweep-value plot table from a summary.csv.
    Plotdata(PlotdataArgs),
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// TOML file supplying any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args, Debug)]
struct PlotdataArgs {
    /// summary.csv written by an experiment.
    summary: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Flags shared by the experiment verbs. `None` means "not given here".
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    /// Keypoint reach tolerance, mm.
    #[arg(long)]
    alpha: Option<f64>,
    /// Error that triggers a model update, mm.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// MPC horizon K.
    #[arg(long)]
    horizon: Option<usize>,
    /// MPC rollouts Q.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Variance of the MPC control perturbation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    waypoint_spacing: Option<f64>,
    /// Total initial actions, split one third random and the rest selected.
    #[arg(long)]
    initial_actions: Option<usize>,
    #[arg(long)]
    random_actions: Option<usize>,
    #[arg(long)]
    selected_actions: Option<usize>,
    /// Exploratory actions per model update.
    #[arg(long)]
    adapting_actions: Option<usize>,
    #[arg(long)]
    exploration_range: Option<f64>,
    /// FIFO cap on the dataset size.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    max_jitter_retries: Option<usize>,
    #[arg(long)]
    forward_length_scale: Option<f64>,
    #[arg(long)]
    inverse_length_scale: Option<f64>,

    /// Comma-separated: triangle, square, pi, spiral.
    #[arg(long, value_delimiter = ',')]
    trajectories: Option<Vec<TrajectoryKind>>,
    /// Comma-separated preset names (built-in or from the config file).
    #[arg(long, value_delimiter = ',')]
    presets: Option<Vec<String>>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Transfer only: preset the models are identified on.
    #[arg(long)]
    source_preset: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Seed base; each run seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory size, mm.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,

    /// Extra presets, as `[[preset]]` tables. Config file only.
    #[arg(skip)]
    preset: Vec<PlantPreset>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Settings { $($f: $a.$f.or($b.$f),)* preset: $b.preset }
    };
}

impl Settings {
    /// Fields set in `self` win; presets come from the file.
    fn over(self, file: Settings) -> Settings {
        let cli = self;
        prefer!(cli, file;
            alpha, gamma, max_steps, horizon, rollouts, sigma, waypoint_spacing, initial_actions,
            random_actions, selected_actions, adapting_actions, exploration_range, capacity, jitter,
            max_jitter_retries, forward_length_scale, inverse_length_scale, trajectories, presets,
            values, source_preset, repetitions, seed, scale, output)
    }

    fn loop_config(&self) -> LoopConfig {
        let mut c = LoopConfig::default();
        if let Some(n) = self.initial_actions {
            c.exploration = c.exploration.with_initial_actions(n);
        }
        let e = &mut c.exploration;
        set(&mut c.alpha, self.alpha);
        set(&mut c.gamma, self.gamma);
        set(&mut c.max_steps, self.max_steps);
        set(&mut c.mpc.horizon, self.horizon);
        set(&mut c.mpc.rollouts, self.rollouts);
        set(&mut c.mpc.sigma, self.sigma);
        set(&mut c.mpc.waypoint_spacing, self.waypoint_spacing);
        set(&mut e.random_actions, self.random_actions);
        set(&mut e.selected_actions, self.selected_actions);
        set(&mut e.adapting_actions, self.adapting_actions);
        set(&mut e.exploration_range, self.exploration_range);
        set(&mut e.gp.jitter, self.jitter);
        set(&mut e.gp.max_jitter_retries, self.max_jitter_retries);
        e.capacity = self.capacity.or(e.capacity);
        e.gp.forward_length_scale = self.forward_length_scale.or(e.gp.forward_length_scale);
        e.gp.inverse_length_scale = self.inverse_length_scale.or(e.gp.inverse_length_scale);
        c
    }

    fn resolve_preset(&self, name: &str) -> Result<PlantPreset, Error> {
        self.preset
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| builtin_preset(name))
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_settings(path: &Path) -> Result<Settings, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

struct Defaults {
    values: &'static [f64],
    trajectories: &'static [TrajectoryKind],
    presets: &'static [&'static str],
    repetitions: usize,
}

fn defaults(kind: ExperimentKind) -> Defaults {
    let all = &TrajectoryKind::ALL;
    match kind {
        ExperimentKind::Single => Defaults {
            values: &[],
            trajectories: &[TrajectoryKind::Square],
            presets: &[DEFAULT_PRESET],
            repetitions: 1,
        },
        ExperimentKind::InitialActionsSweep => Defaults {
            values: &[10.0, 15.0, 20.0, 25.0, 30.0],
            trajectories: all,
            presets: &[DEFAULT_PRESET],
            repetitions: 5,
        },
        ExperimentKind::SigmaSweep => Defaults {
            values: &[0.005, 0.02, 0.1],
            trajectories: all,
            presets: &["drifting"],
            repetitions: 5,
        },
        ExperimentKind::Transfer => Defaults {
            values: &[25.0],
            trajectories: all,
            presets: &["preset-1", "preset-2", "preset-3", "preset-5"],
            repetitions: 5,
        },
    }
}

fn build_spec(kind: ExperimentKind, args: ExperimentArgs) -> Result<ExperimentSpec, Error> {
    let d = defaults(kind);
    let file = match &args.config {
        Some(path) => read_settings(path)?,
        None => Settings::default(),
    };
    let env_output = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
    let output = args.settings.output.clone().or(env_output).or(file.output.clone());
    let s = args.settings.over(file);

    if kind == ExperimentKind::Single && s.values.is_some() {
        return Err(Error::InvalidArgument("`run` takes no sweep values".into()));
    }
    if kind != ExperimentKind::Transfer && s.source_preset.is_some() {
        return Err(Error::InvalidArgument("--source-preset only applies to `transfer`".into()));
    }
    let presets = match &s.presets {
        Some(names) => names.iter().map(|n| s.resolve_preset(n)).collect::<Result<Vec<_>, _>>()?,
        None => d.presets.iter().map(|n| s.resolve_preset(n)).collect::<Result<Vec<_>, _>>()?,
    };
    let source_preset = match kind {
        ExperimentKind::Transfer => Some(s.resolve_preset(s.source_preset.as_deref().unwrap_or(DEFAULT_PRESET))?),
        _ => None,
    };
    Ok(ExperimentSpec {
        kind,
        sweep_values: s.values.clone().unwrap_or_else(|| d.values.to_vec()),
        trajectories: s.trajectories.clone().unwrap_or_else(|| d.trajectories.to_vec()),
        presets,
        repetitions: s.repetitions.unwrap_or(d.repetitions),
        seed_base: s.seed.unwrap_or(0),
        output_path: output.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
        base: s.loop_config(),
        scale: s.scale.unwrap_or(DEFAULT_SCALE),
        source_preset,
    })
}

fn print_report(spec: &ExperimentSpec, report: &ExperimentReport) {
    println!(
        "{}: {} runs, {} failed, results in {}",
        spec.kind.name(),
        report.rows.len(),
        report.failures(),
        spec.output_path.display()
    );
    println!("{:>10} {:>5} {:>10} {:>10} {:>10} {:>9}", "value", "runs", "done", "mean_err", "max_mean", "adapting");
    for a in &report.aggregates {
        println!(
            "{:>10} {:>5} {:>10} {:>10.4} {:>10.4} {:>9.2}",
            a.sweep_value, a.runs, a.completed_runs, a.mean_error_mean, a.mean_error_max, a.adapting_actions_mean
        );
    }
    for r in report.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!("failed: {} {} r{}: {}", r.trajectory, r.preset, r.repetition, r.message);
    }
}

fn plotdata(args: &PlotdataArgs) -> Result<(), Error> {
    let table = emit_plotdata_file(&args.summary)?;
    match &args.output {
        Some(path) => std::fs::write(path, table).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    let (kind, args) = match cli.command {
        Command::Plotdata(args) => {
            plotdata(&args)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run(a) => (ExperimentKind::Single, a),
        Command::SweepInitial(a) => (ExperimentKind::InitialActionsSweep, a),
        Command::SweepSigma(a) => (ExperimentKind::SigmaSweep, a),
        Command::Transfer(a) => (ExperimentKind::Transfer, a),
    };
    let spec = build_spec(kind, args)?;
    let report = run_experiment(&spec)?;
    print_report(&spec, &report);
    Ok(if report.failures() > 0 {
        ExitCode::from(PARTIAL_FAILURE)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
