//! Command-line front end shared by the `mpc` binary and its tests.

use std::path::{Path, PathBuf};
use std::ffi::OsString;

use clap::{Parser, Subcommand};
use mpc_core::controller::{tracking_transform, Plant};
use mpc_core::feasibility::is_state_feasible;
use mpc_core::{MpcError, Vector};
use crate::demos::{demo_config, demo_names};
use crate::{emit_plot, load_config, run_experiment, ConfigError, ExperimentConfig, ExperimentError};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "mpc", version, about = "Run linear and nonlinear MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop described by a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory CSV output
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG plot output
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Run a bundled demo: lmpc-stabilize, lmpc-track, nmpc-stabilize, nmpc-track
    Demo {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Phase-I feasibility check of one state for an LTI config
    CheckFeasibility {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated state, e.g. "10,5"
        #[arg(long, allow_hyphen_values = true)]
        state: String,
    },
}

fn setup_exit_code(e: &MpcError) -> u8 {
    match e {
        MpcError::NonConvex(_) | MpcError::SolverFailure { .. } | MpcError::Evaluation(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn fail(e: &ExperimentError) -> u8 {
    eprintln!("error: {e}");
    match e {
        ExperimentError::Config(_) => EXIT_CONFIG,
        ExperimentError::Setup(inner) => setup_exit_code(inner),
        _ => 1,
    }
}

fn run(cfg: &ExperimentConfig, out: Option<&Path>, plot: Option<&Path>) -> u8 {
    let output = match run_experiment(cfg, out) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    println!("{}", output.summary);
    if let Some(path) = plot {
        if let Err(e) = emit_plot(&output.trajectory, &output.mpc, path) {
            return fail(&e.into());
        }
    }
    match &output.summary.abort {
        None => 0,
        Some(a) if a.infeasible => EXIT_INFEASIBLE,
        Some(_) => EXIT_SOLVER,
    }
}

fn parse_state(text: &str) -> Result<Vector, ConfigError> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    values
        .map(Vector::from_vec)
        .map_err(|e| ConfigError::Invalid(format!("state {text:?}: {e}")))
}

fn check_feasibility(config: &Path, state: &str) -> u8 {
    let outcome = (|| -> Result<_, ExperimentError> {
        let cfg = load_config(config)?;
        let exp = cfg.experiment()?;
        let Plant::Lti(model) = &exp.plant else {
            return Err(ConfigError::Invalid("feasibility checks need an LTI model".into()).into());
        };
        let x = parse_state(state)?;
        if x.len() != exp.x_0.len() {
            return Err(ConfigError::Invalid(format!("state must have {} entries", exp.x_0.len())).into());
        }
        let report = match &exp.mpc.reference {
            Some(x_r) => {
                let setup = tracking_transform(&exp.mpc, &exp.plant, x_r).map_err(ExperimentError::Setup)?;
                is_state_feasible(model, &setup.error_config(&exp.mpc), &(&x - x_r))
            }
            None => is_state_feasible(model, &exp.mpc, &x),
        }
        .map_err(ExperimentError::Setup)?;
        Ok(report)
    })();
    match outcome {
        Ok(report) => {
            println!("feasible: {}", report.feasible);
            println!("phase-I slack: {:.3e}", report.phase1_slack);
            if let Some(w) = &report.witness {
                let w: Vec<String> = w.iter().map(|v| format!("{v:.6}")).collect();
                println!("witness: [{}]", w.join(", "));
            }
            if report.feasible {
                0
            } else {
                EXIT_INFEASIBLE
            }
        }
        Err(e) => fail(&e),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match cli.command {
        Command::Run { config, out, plot } => match load_config(&config) {
            Ok(cfg) => run(&cfg, out.as_deref(), plot.as_deref()),
            Err(e) => fail(&e.into()),
        },
        Command::Demo { name, out, plot } => match demo_config(&name) {
            Some(Ok(cfg)) => run(&cfg, out.as_deref(), plot.as_deref()),
            Some(Err(e)) => fail(&e.into()),
            None => {
                let names: Vec<&str> = demo_names().collect();
                eprintln!("error: unknown demo {name:?} (expected one of {})", names.join(", "));
                EXIT_CONFIG
            }
        },
        Command::CheckFeasibility { config, state } => check_feasibility(&config, &state),
    }
}
