//! Experiment harness: JSON configs, bundled demos, trajectory CSV and SVG
//! output.

pub mod app;
pub mod config;
pub mod demos;
pub mod plot;
pub mod run;
pub mod trajectory_csv;

pub use config::{load_config, parse_config, ConfigError, Experiment, ExperimentConfig};
pub use plot::{emit_plot, render_svg, PlotError};
pub use run::{run_experiment, ExperimentError, RunOutput, Summary};
pub use trajectory_csv::{read_trajectory, write_trajectory, CsvError};
