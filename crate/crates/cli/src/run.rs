//! End-to-end experiment execution.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use mpc_core::controller::{run_closed_loop, MpcConfig, RunError, Trajectory};
use mpc_core::{Dynamics, MpcError};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::PlotError;
use crate::trajectory_csv::{write_trajectory, CsvError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment setup failed: {0}")]
    Setup(MpcError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub step: usize,
    pub state: Vec<f64>,
    pub message: String,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub final_state: Vec<f64>,
    /// Largest violation of the original state and input sets along the run.
    pub max_constraint_violation: f64,
    pub total_cost: f64,
    pub total_iterations: usize,
    pub non_optimal_steps: usize,
    pub wall_time: Duration,
    pub abort: Option<Abort>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state: Vec<String> = self.final_state.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "final state: [{}]", state.join(", "))?;
        writeln!(f, "max constraint violation: {:.3e}", self.max_constraint_violation)?;
        writeln!(f, "total cost: {:.6}", self.total_cost)?;
        writeln!(f, "total solver iterations: {}", self.total_iterations)?;
        writeln!(f, "non-optimal steps: {}", self.non_optimal_steps)?;
        write!(f, "wall time: {:.3} s", self.wall_time.as_secs_f64())?;
        if let Some(a) = &self.abort {
            write!(f, "\naborted at step {}: {}", a.step, a.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub trajectory: Trajectory,
    pub mpc: MpcConfig,
    pub state_dim: usize,
    pub input_dim: usize,
}

pub fn max_constraint_violation(traj: &Trajectory, cfg: &MpcConfig) -> f64 {
    let xs = traj.states.iter().map(|x| cfg.x_set.max_violation(x).unwrap_or(f64::INFINITY));
    let us = traj.inputs.iter().map(|u| cfg.u_set.max_violation(u).unwrap_or(f64::INFINITY));
    xs.chain(us).fold(0.0, f64::max)
}

/// Runs the closed loop described by `cfg` and writes the trajectory CSV to
/// `out` when given. Infeasible aborts still produce a summary and a
/// partial CSV.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput, ExperimentError> {
    let exp = cfg.experiment()?;
    let (n, m) = (exp.plant.state_dim(), exp.plant.input_dim());
    let start = Instant::now();
    let (trajectory, abort) = match run_closed_loop(&exp.plant, &exp.mpc, &exp.x_0) {
        Ok(t) => (t, None),
        Err(RunError::Setup(e)) => return Err(ExperimentError::Setup(e)),
        Err(RunError::Aborted {
            step,
            state,
            source,
            partial,
        }) => {
            let abort = Abort {
                step,
                state: state.iter().copied().collect(),
                infeasible: matches!(source, MpcError::InfeasibleStep { .. }),
                message: source.to_string(),
            };
            (*partial, Some(abort))
        }
    };
    let wall_time = start.elapsed();

    let summary = Summary {
        steps: trajectory.steps(),
        final_state: trajectory.final_state().map(|x| x.iter().copied().collect()).unwrap_or_default(),
        max_constraint_violation: max_constraint_violation(&trajectory, &exp.mpc),
        total_cost: trajectory.closed_loop_cost(&exp.mpc),
        total_iterations: trajectory.iterations.iter().sum(),
        non_optimal_steps: trajectory.statuses.iter().filter(|s| !s.is_optimal()).count(),
        wall_time,
        abort,
    };
    if let Some(path) = out {
        let file = File::create(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        write_trajectory(&trajectory, n, m, BufWriter::new(file))?;
    }
    Ok(RunOutput {
        summary,
        trajectory,
        mpc: exp.mpc,
        state_dim: n,
        input_dim: m,
    })
}
