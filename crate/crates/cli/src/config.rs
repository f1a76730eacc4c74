//! JSON experiment configs.

use mpc_core::controller::{Formulation, MpcConfig, Plant};
use mpc_core::numerics::matrix_from_rows;
use mpc_core::{LtiModel, Matrix, NonlinearModel, PendulumParams, Polytope, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Lti {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
    },
    Pendulum {
        #[serde(rename = "M", default = "defaults::mass")]
        mass: f64,
        #[serde(rename = "B_fric", default = "defaults::friction")]
        friction: f64,
        #[serde(rename = "l", default = "defaults::length")]
        length: f64,
        #[serde(rename = "g_grav", default = "defaults::gravity")]
        gravity: f64,
        #[serde(rename = "T", default = "defaults::sample_time")]
        sample_time: f64,
    },
    LtiAsNonlinear {
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
    },
}

mod defaults {
    use mpc_core::PendulumParams;

    pub fn mass() -> f64 {
        PendulumParams::default().mass
    }
    pub fn friction() -> f64 {
        PendulumParams::default().friction
    }
    pub fn length() -> f64 {
        PendulumParams::default().length
    }
    pub fn gravity() -> f64 {
        PendulumParams::default().gravity
    }
    pub fn sample_time() -> f64 {
        PendulumParams::default().sample_time
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    #[serde(rename = "N_T")]
    pub time_horizon: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "N_C", default)]
    pub control_horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "Q_N", default)]
    pub q_n: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(rename = "F")]
    pub f: Rows,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(rename = "F_x")]
    pub f_x: Rows,
    pub g_x: Vec<f64>,
    #[serde(rename = "F_u")]
    pub f_u: Rows,
    pub g_u: Vec<f64>,
    #[serde(default)]
    pub terminal: Option<SetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub x_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormulationSpec {
    #[default]
    Sparse,
    Condensed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub formulation: FormulationSpec,
    #[serde(default)]
    pub eps_abs: Option<f64>,
    #[serde(default)]
    pub eps_rel: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default = "defaults::yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub shrink_horizon: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            formulation: FormulationSpec::Sparse,
            eps_abs: None,
            eps_rel: None,
            max_iter: None,
            warm_start: true,
            shrink_horizon: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub horizon: HorizonSpec,
    pub weights: WeightSpec,
    pub constraints: ConstraintSpec,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub solver: SolverSpec,
}

/// Everything needed to run a closed loop.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub plant: Plant,
    pub mpc: MpcConfig,
    pub x_0: Vector,
}

fn invalid(what: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(format!("{what}: {e}"))
}

fn matrix(what: &str, rows: &Rows) -> Result<Matrix, ConfigError> {
    matrix_from_rows(rows).map_err(|e| invalid(what, e))
}

fn polytope(what: &str, f: &Rows, g: &[f64]) -> Result<Polytope, ConfigError> {
    Polytope::new(matrix(what, f)?, Vector::from_column_slice(g)).map_err(|e| invalid(what, e))
}

fn lti(a: &Rows, b: &Rows) -> Result<LtiModel, ConfigError> {
    LtiModel::new(matrix("A", a)?, matrix("B", b)?).map_err(|e| invalid("model", e))
}

impl ExperimentConfig {
    pub fn plant(&self) -> Result<Plant, ConfigError> {
        Ok(match &self.model {
            ModelSpec::Lti { a, b } => Plant::Lti(lti(a, b)?),
            ModelSpec::LtiAsNonlinear { a, b } => Plant::Nonlinear(NonlinearModel::from_lti(&lti(a, b)?)),
            ModelSpec::Pendulum {
                mass,
                friction,
                length,
                gravity,
                sample_time,
            } => {
                let params = PendulumParams {
                    mass: *mass,
                    friction: *friction,
                    length: *length,
                    gravity: *gravity,
                    sample_time: *sample_time,
                };
                Plant::Nonlinear(NonlinearModel::pendulum(params).map_err(|e| invalid("pendulum", e))?)
            }
        })
    }

    pub fn mpc_config(&self) -> Result<MpcConfig, ConfigError> {
        let q = matrix("Q", &self.weights.q)?;
        let mut cfg = MpcConfig::new(
            self.horizon.horizon,
            self.horizon.time_horizon,
            q,
            matrix("R", &self.weights.r)?,
            polytope("state constraints", &self.constraints.f_x, &self.constraints.g_x)?,
            polytope("input constraints", &self.constraints.f_u, &self.constraints.g_u)?,
        );
        if let Some(q_n) = &self.weights.q_n {
            cfg.q_n = matrix("Q_N", q_n)?;
        }
        if let Some(n_c) = self.horizon.control_horizon {
            cfg.control_horizon = n_c;
        }
        if let Some(t) = &self.constraints.terminal {
            cfg.terminal_set = Some(polytope("terminal set", &t.f, &t.g)?);
        }
        cfg.reference = self.reference.as_ref().map(|r| Vector::from_column_slice(&r.x_r));
        cfg.formulation = match self.solver.formulation {
            FormulationSpec::Sparse => Formulation::Sparse,
            FormulationSpec::Condensed => Formulation::Condensed,
        };
        if let Some(e) = self.solver.eps_abs {
            cfg.qp.eps_abs = e;
        }
        if let Some(e) = self.solver.eps_rel {
            cfg.qp.eps_rel = e;
        }
        if let Some(it) = self.solver.max_iter {
            cfg.qp.max_iter = it;
        }
        cfg.sqp.qp = cfg.qp;
        cfg.warm_start = self.solver.warm_start;
        cfg.shrink_horizon = self.solver.shrink_horizon;
        Ok(cfg)
    }

    /// Builds and validates plant, controller config and initial state.
    pub fn experiment(&self) -> Result<Experiment, ConfigError> {
        use mpc_core::Dynamics;
        let plant = self.plant()?;
        let mpc = self.mpc_config()?;
        let (n, m) = (plant.state_dim(), plant.input_dim());
        mpc.validate(n, m).map_err(|e| invalid("controller", e))?;
        for (name, v) in [("eps_abs", mpc.qp.eps_abs), ("eps_rel", mpc.qp.eps_rel)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid("solver", format!("{name} must be a non-negative number")));
            }
        }
        if mpc.qp.max_iter == 0 {
            return Err(invalid("solver", "max_iter must be positive"));
        }
        if self.initial_state.len() != n {
            return Err(invalid(
                "initial_state",
                format!("has {} entries, model has {n} states", self.initial_state.len()),
            ));
        }
        Ok(Experiment {
            plant,
            mpc,
            x_0: Vector::from_column_slice(&self.initial_state),
        })
    }

    /// Fills in `Q_N = Q` and `N_C = N` when omitted.
    fn apply_defaults(&mut self) {
        if self.weights.q_n.is_none() {
            self.weights.q_n = Some(self.weights.q.clone());
        }
        if self.horizon.control_horizon.is_none() {
            self.horizon.control_horizon = Some(self.horizon.horizon);
        }
    }
}

/// Parses and validates a JSON experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.apply_defaults();
    cfg.experiment()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
