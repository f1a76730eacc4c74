//! Receding-horizon loops for linear and nonlinear MPC, set-point tracking
//! and warm starting.

use std::fmt;

use log::warn;
use thiserror::Error;

use crate::condense::{
    assemble_condensed_qp, assemble_sparse_qp, build_prediction, build_weights, fix_trailing_to_zero,
    reduce_control_horizon, stack_constraints,
};
use crate::error::{MpcError, Result};
use crate::model::{Dynamics, LtiModel, NonlinearModel, Polytope, CONTAINS_TOL};
use crate::nlp::{build_feq, solve_nlp, NlpProblem, NlpStatus, SqpSettings};
use crate::numerics::{block_diag, max_asymmetry, vconcat, vstack, Matrix, Vector};
use crate::qp::{solve_qp, QpSettings, QpStatus, WarmStart};

/// Which QP the linear controller solves each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Formulation {
    /// States and inputs as decision variables, dynamics as equalities.
    #[default]
    Sparse,
    /// Inputs only; states eliminated through the prediction matrices.
    Condensed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Control horizon `N_C`; trailing `N - N_C` inputs are fixed to zero.
    pub control_horizon: usize,
    /// Number of closed-loop steps `N_T`.
    pub time_horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub q_n: Matrix,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub terminal_set: Option<Polytope>,
    pub formulation: Formulation,
    pub reference: Option<Vector>,
    pub qp: QpSettings,
    pub sqp: SqpSettings,
    pub warm_start: bool,
    /// Clip the prediction window at the end of the run, `N_k = min(N, N_T - k)`.
    pub shrink_horizon: bool,
}

impl MpcConfig {
    /// Config with `N_C = N`, `Q_N = Q`, sparse formulation and warm starting.
    pub fn new(horizon: usize, time_horizon: usize, q: Matrix, r: Matrix, x_set: Polytope, u_set: Polytope) -> Self {
        Self {
            horizon,
            control_horizon: horizon,
            time_horizon,
            q_n: q.clone(),
            q,
            r,
            x_set,
            u_set,
            terminal_set: None,
            formulation: Formulation::default(),
            reference: None,
            qp: QpSettings::default(),
            sqp: SqpSettings::default(),
            warm_start: true,
            shrink_horizon: false,
        }
    }

    /// Checks the config against model dimensions; returns warnings for
    /// accepted-but-unusual settings.
    pub fn validate(&self, n: usize, m: usize) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.horizon == 0 {
            return Err(MpcError::InvalidHorizon("N must be at least 1".into()));
        }
        if self.horizon == 1 {
            warnings.push("prediction horizon N = 1 (usually 2 <= N)".to_string());
        }
        if self.horizon > self.time_horizon {
            return Err(MpcError::InvalidHorizon(format!(
                "N = {} exceeds N_T = {}",
                self.horizon, self.time_horizon
            )));
        }
        if self.control_horizon == 0 || self.control_horizon > self.horizon {
            return Err(MpcError::InvalidHorizon(format!(
                "N_C = {} must lie in 1..={}",
                self.control_horizon, self.horizon
            )));
        }
        for (name, w, dim) in [("Q", &self.q, n), ("Q_N", &self.q_n, n), ("R", &self.r, m)] {
            if w.shape() != (dim, dim) {
                return Err(MpcError::InvalidWeight(format!(
                    "{name} is {}x{}, expected {dim}x{dim}",
                    w.nrows(),
                    w.ncols()
                )));
            }
            if max_asymmetry(w) > 1e-10 {
                return Err(MpcError::InvalidWeight(format!("{name} is not symmetric")));
            }
        }
        if self.r.clone().cholesky().is_none() {
            return Err(MpcError::InvalidWeight("R must be positive definite".into()));
        }
        for (name, w) in [("Q", &self.q), ("Q_N", &self.q_n)] {
            let min_eig = w.symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                return Err(MpcError::InvalidWeight(format!("{name} is not positive semidefinite")));
            }
            if name == "Q" && min_eig <= 1e-12 {
                warnings.push("Q is only positive semidefinite".to_string());
            }
        }
        if self.x_set.dim() != n || self.u_set.dim() != m {
            return Err(MpcError::shape("constraint sets do not match the model dimensions"));
        }
        if let Some(t) = &self.terminal_set {
            if t.dim() != n {
                return Err(MpcError::shape("terminal set does not match the state dimension"));
            }
        }
        if let Some(x_r) = &self.reference {
            if x_r.len() != n {
                return Err(MpcError::shape("reference has wrong dimension"));
            }
        }
        Ok(warnings)
    }

    /// `(N_k, N_C,k)` used at closed-loop step `k`.
    pub fn horizons_at(&self, k: usize) -> (usize, usize) {
        if self.shrink_horizon && k < self.time_horizon {
            let n_k = self.horizon.min(self.time_horizon - k);
            (n_k, self.control_horizon.min(n_k))
        } else {
            (self.horizon, self.control_horizon)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    LineSearchFailure,
}

impl StepStatus {
    pub fn is_optimal(self) -> bool {
        self == StepStatus::Optimal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Optimal => "Optimal",
            StepStatus::MaxIterations => "MaxIterations",
            StepStatus::Infeasible => "Infeasible",
            StepStatus::LineSearchFailure => "LineSearchFailure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            StepStatus::Optimal,
            StepStatus::MaxIterations,
            StepStatus::Infeasible,
            StepStatus::LineSearchFailure,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<QpStatus> for StepStatus {
    fn from(s: QpStatus) -> Self {
        match s {
            QpStatus::Optimal => StepStatus::Optimal,
            QpStatus::MaxIterations => StepStatus::MaxIterations,
            QpStatus::Infeasible => StepStatus::Infeasible,
        }
    }
}

impl From<NlpStatus> for StepStatus {
    fn from(s: NlpStatus) -> Self {
        match s {
            NlpStatus::Optimal => StepStatus::Optimal,
            NlpStatus::MaxIterations => StepStatus::MaxIterations,
            NlpStatus::LineSearchFailure => StepStatus::LineSearchFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcStepResult {
    /// Applied input, the first block of `u_star`.
    pub u_k: Vector,
    /// Optimal input sequence, `m N` entries (fixed tail blocks included).
    pub u_star: Vector,
    /// Predicted states, `n (N + 1)` entries.
    pub x_star: Vector,
    pub j_star: f64,
    pub status: StepStatus,
    pub iterations: usize,
}

/// Primal starting point for a step, in trajectory layout.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub states: Vector,
    pub inputs: Vector,
}

impl InitialGuess {
    /// Previous plan advanced by one block: the last state is repeated and
    /// the input sequence is zero-padded, then both are fitted to `horizon`.
    pub fn shifted(prev: &MpcStepResult, n: usize, m: usize, horizon: usize) -> Self {
        let prev_states = prev.x_star.len() / n;
        let states = Vector::from_fn(n * (horizon + 1), |i, _| {
            let (blk, j) = (i / n, i % n);
            let src = (blk + 1).min(prev_states - 1);
            prev.x_star[src * n + j]
        });
        let prev_inputs = prev.u_star.len() / m;
        let inputs = Vector::from_fn(m * horizon, |i, _| {
            let (blk, j) = (i / m, i % m);
            if blk + 1 < prev_inputs {
                prev.u_star[(blk + 1) * m + j]
            } else {
                0.0
            }
        });
        Self { states, inputs }
    }

    fn fits(&self, n: usize, m: usize, horizon: usize) -> bool {
        self.states.len() == n * (horizon + 1) && self.inputs.len() == m * horizon
    }
}

fn check_state(x_k: &Vector, n: usize) -> Result<()> {
    if x_k.len() != n {
        return Err(MpcError::shape(format!(
            "state has {} entries, model expects {n}",
            x_k.len()
        )));
    }
    Ok(())
}

fn pad_inputs(u: &Vector, total: usize) -> Vector {
    let mut out = Vector::zeros(total);
    out.rows_mut(0, u.len()).copy_from(u);
    out
}

/// One linear MPC step from `x_k`.
pub fn lmpc_step(model: &LtiModel, cfg: &MpcConfig, x_k: &Vector, warm: Option<&InitialGuess>) -> Result<MpcStepResult> {
    lmpc_step_with(model, cfg, cfg.horizon, cfg.control_horizon, x_k, warm)
}

fn lmpc_step_with(
    model: &LtiModel,
    cfg: &MpcConfig,
    horizon: usize,
    control_horizon: usize,
    x_k: &Vector,
    warm: Option<&InitialGuess>,
) -> Result<MpcStepResult> {
    let (n, m) = (model.state_dim(), model.input_dim());
    check_state(x_k, n)?;
    let pm = build_prediction(model, horizon)?;
    let w = build_weights(&cfg.q, &cfg.r, &cfg.q_n, horizon)?;
    let c = stack_constraints(&cfg.x_set, &cfg.u_set, cfg.terminal_set.as_ref(), horizon)?;
    let warm = warm.filter(|g| g.fits(n, m, horizon));
    let free_inputs = m * control_horizon;

    let (u_star, x_star, sol) = match cfg.formulation {
        Formulation::Sparse => {
            let nx = n * (horizon + 1);
            let mut qp = assemble_sparse_qp(&pm, &w, &c, x_k)?;
            if control_horizon < horizon {
                qp = fix_trailing_to_zero(&qp, nx + free_inputs)?;
            }
            let start = warm.map(|g| {
                WarmStart::primal(vconcat(&[&g.states, &g.inputs.rows(0, free_inputs).into_owned()]))
            });
            let sol = solve_qp(&qp, start.as_ref(), &cfg.qp)?;
            let x_star = sol.z_star.rows(0, nx).into_owned();
            let u = sol.z_star.rows(nx, free_inputs).into_owned();
            (pad_inputs(&u, m * horizon), x_star, sol)
        }
        Formulation::Condensed => {
            let qp = assemble_condensed_qp(&pm, &w, &c, x_k)?;
            let qp = reduce_control_horizon(&qp, horizon, control_horizon)?;
            let start = warm.map(|g| WarmStart::primal(g.inputs.rows(0, free_inputs).into_owned()));
            let sol = solve_qp(&qp, start.as_ref(), &cfg.qp)?;
            let u_star = pad_inputs(&sol.z_star, m * horizon);
            let x_star = pm.predict(x_k, &u_star)?;
            (u_star, x_star, sol)
        }
    };
    if sol.status == QpStatus::Infeasible {
        return Err(MpcError::infeasible_at(x_k));
    }
    Ok(MpcStepResult {
        u_k: u_star.rows(0, m).into_owned(),
        u_star,
        x_star,
        j_star: sol.objective,
        status: sol.status.into(),
        iterations: sol.iterations,
    })
}

/// One nonlinear MPC step from `x_k`, solved by SQP.
pub fn nmpc_step(
    model: &NonlinearModel,
    cfg: &MpcConfig,
    x_k: &Vector,
    warm: Option<&InitialGuess>,
) -> Result<MpcStepResult> {
    nmpc_step_with(model, cfg, cfg.horizon, cfg.control_horizon, x_k, warm)
}

fn nmpc_step_with(
    model: &NonlinearModel,
    cfg: &MpcConfig,
    horizon: usize,
    control_horizon: usize,
    x_k: &Vector,
    warm: Option<&InitialGuess>,
) -> Result<MpcStepResult> {
    let (n, m) = (model.state_dim(), model.input_dim());
    check_state(x_k, n)?;
    let residual = build_feq(model, x_k, horizon)?;
    let w = build_weights(&cfg.q, &cfg.r, &cfg.q_n, horizon)?;
    let c = stack_constraints(&cfg.x_set, &cfg.u_set, cfg.terminal_set.as_ref(), horizon)?;
    let nx = n * (horizon + 1);
    let d = residual.dim();

    let h = block_diag(&[&w.q_x, &w.r_u]);
    let mut f = block_diag(&[&c.f_x, &c.f_u]);
    let mut g = vconcat(&[&c.g_x, &c.g_u]);
    if control_horizon < horizon {
        // pin the trailing inputs to zero with ±u ≤ 0
        let fixed = m * (horizon - control_horizon);
        let mut pin = Matrix::zeros(2 * fixed, d);
        for i in 0..fixed {
            let col = nx + m * control_horizon + i;
            pin[(2 * i, col)] = 1.0;
            pin[(2 * i + 1, col)] = -1.0;
        }
        f = vstack(&[&f, &pin]);
        g = vconcat(&[&g, &Vector::zeros(2 * fixed)]);
    }

    let z0 = match warm.filter(|g| g.fits(n, m, horizon)) {
        Some(guess) => vconcat(&[&guess.states, &guess.inputs]),
        None => {
            let mut z = Vector::zeros(d);
            for i in 0..=horizon {
                z.rows_mut(i * n, n).copy_from(x_k);
            }
            z
        }
    };

    let eval = residual.clone();
    let mut nlp = NlpProblem::new(h, Vector::zeros(d), f, g, move |z| eval.eval(z));
    if model.has_jacobian() {
        let jac = residual.clone();
        nlp = nlp.with_jacobian(move |z| jac.jacobian(z));
    }
    let sol = solve_nlp(&nlp, &z0, &cfg.sqp)?;
    if sol.elastic && sol.eq_violation > cfg.sqp.tol {
        return Err(MpcError::infeasible_at(x_k));
    }
    let u_star = sol.z_star.rows(nx, m * horizon).into_owned();
    Ok(MpcStepResult {
        u_k: u_star.rows(0, m).into_owned(),
        x_star: sol.z_star.rows(0, nx).into_owned(),
        u_star,
        j_star: sol.objective,
        status: sol.status.into(),
        iterations: sol.iterations,
    })
}

/// The system being controlled; the same model is used as plant and predictor.
#[derive(Debug, Clone)]
pub enum Plant {
    Lti(LtiModel),
    Nonlinear(NonlinearModel),
}

impl Dynamics for Plant {
    fn state_dim(&self) -> usize {
        match self {
            Plant::Lti(m) => m.state_dim(),
            Plant::Nonlinear(m) => m.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Plant::Lti(m) => m.input_dim(),
            Plant::Nonlinear(m) => m.input_dim(),
        }
    }

    fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        match self {
            Plant::Lti(m) => m.step(x, u),
            Plant::Nonlinear(m) => m.step(x, u),
        }
    }
}

/// Steady input and constraint sets expressed in error coordinates.
#[derive(Debug, Clone)]
pub struct TrackingSetup {
    pub x_r: Vector,
    pub u_r: Vector,
    /// `‖x_r - f(x_r, u_r)‖₂`; zero when `x_r` is an equilibrium.
    pub steady_state_residual: f64,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub terminal_set: Option<Polytope>,
    /// `f_e(x_e, u_e) = f(x_e + x_r, u_e + u_r) - x_r` for nonlinear plants.
    pub error_model: Option<NonlinearModel>,
}

impl TrackingSetup {
    /// `cfg` with the shifted sets and no reference.
    pub fn error_config(&self, cfg: &MpcConfig) -> MpcConfig {
        MpcConfig {
            x_set: self.x_set.clone(),
            u_set: self.u_set.clone(),
            terminal_set: self.terminal_set.clone(),
            reference: None,
            ..cfg.clone()
        }
    }
}

pub fn tracking_transform(cfg: &MpcConfig, plant: &Plant, x_r: &Vector) -> Result<TrackingSetup> {
    check_state(x_r, plant.state_dim())?;
    let (ss, error_model) = match plant {
        Plant::Lti(m) => (m.steady_state_input(x_r)?, None),
        Plant::Nonlinear(m) => {
            let ss = m.steady_state_input(x_r, &Vector::zeros(m.input_dim()))?;
            let err = m.shifted(x_r, &ss.input);
            (ss, Some(err))
        }
    };
    if ss.residual > 1e-8 {
        warn!(
            "reference is not an equilibrium of the model (steady-state residual {:.3e})",
            ss.residual
        );
    }
    if !cfg.x_set.contains(x_r, CONTAINS_TOL)? {
        return Err(MpcError::ReferenceInfeasible("x_r lies outside the state set".into()));
    }
    if !cfg.u_set.contains(&ss.input, CONTAINS_TOL)? {
        return Err(MpcError::ReferenceInfeasible(format!(
            "steady input {:?} violates the input set",
            ss.input.as_slice()
        )));
    }
    let terminal_set = cfg.terminal_set.as_ref().map(|t| t.shifted(x_r)).transpose()?;
    Ok(TrackingSetup {
        x_r: x_r.clone(),
        u_r: ss.input.clone(),
        steady_state_residual: ss.residual,
        x_set: cfg.x_set.shifted(x_r)?,
        u_set: cfg.u_set.shifted(&ss.input)?,
        terminal_set,
        error_model,
    })
}

/// Closed-loop record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `N_T + 1` states (fewer when a run aborts).
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub costs: Vec<f64>,
    pub statuses: Vec<StepStatus>,
    pub iterations: Vec<usize>,
    /// Optimal input sequence of every step, in original coordinates.
    pub plans: Vec<Vector>,
    /// `(x_r, u_r)` when the run tracked a reference.
    pub reference: Option<(Vector, Vector)>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> Option<&Vector> {
        self.states.last()
    }

    /// Realized cost `Σ x_eᵀQx_e + u_eᵀRu_e + x_e,Nᵀ Q_N x_e,N` in error coordinates.
    pub fn closed_loop_cost(&self, cfg: &MpcConfig) -> f64 {
        let (x_r, u_r) = match &self.reference {
            Some((x, u)) => (x.clone(), u.clone()),
            None => (
                Vector::zeros(cfg.q.nrows()),
                Vector::zeros(cfg.r.nrows()),
            ),
        };
        let mut total = 0.0;
        for (x, u) in self.states.iter().zip(&self.inputs) {
            let (xe, ue) = (x - &x_r, u - &u_r);
            total += xe.dot(&(&cfg.q * &xe)) + ue.dot(&(&cfg.r * &ue));
        }
        if let Some(last) = self.states.get(self.inputs.len()) {
            let xe = last - &x_r;
            total += xe.dot(&(&cfg.q_n * &xe));
        }
        total
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Setup(#[from] MpcError),
    #[error("run aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        state: Vector,
        source: MpcError,
        partial: Box<Trajectory>,
    },
}

/// Runs `N_T` receding-horizon steps from `x_0`, applying each first input
/// to `plant`.
pub fn run_closed_loop(plant: &Plant, cfg: &MpcConfig, x_0: &Vector) -> Result<Trajectory, RunError> {
    let (n, m) = (plant.state_dim(), plant.input_dim());
    check_state(x_0, n)?;
    for w in cfg.validate(n, m)? {
        warn!("{w}");
    }
    let tracking = cfg
        .reference
        .as_ref()
        .map(|x_r| tracking_transform(cfg, plant, x_r))
        .transpose()?;
    let step_cfg = match &tracking {
        Some(t) => t.error_config(cfg),
        None => cfg.clone(),
    };
    let (x_r, u_r) = match &tracking {
        Some(t) => (t.x_r.clone(), t.u_r.clone()),
        None => (Vector::zeros(n), Vector::zeros(m)),
    };
    let nonlinear = match plant {
        Plant::Lti(_) => None,
        Plant::Nonlinear(model) => Some(
            tracking
                .as_ref()
                .and_then(|t| t.error_model.clone())
                .unwrap_or_else(|| model.clone()),
        ),
    };

    let mut traj = Trajectory {
        states: vec![x_0.clone()],
        reference: tracking.as_ref().map(|t| (t.x_r.clone(), t.u_r.clone())),
        ..Default::default()
    };
    let mut guess: Option<InitialGuess> = None;
    let mut x = x_0.clone();
    for k in 0..cfg.time_horizon {
        let (horizon, control_horizon) = cfg.horizons_at(k);
        let x_e = &x - &x_r;
        let outcome = match (plant, &nonlinear) {
            (Plant::Lti(model), _) => {
                lmpc_step_with(model, &step_cfg, horizon, control_horizon, &x_e, guess.as_ref())
            }
            (Plant::Nonlinear(_), Some(model)) => {
                nmpc_step_with(model, &step_cfg, horizon, control_horizon, &x_e, guess.as_ref())
            }
            (Plant::Nonlinear(_), None) => unreachable!("nonlinear plant always has a predictor"),
        };
        let step = match outcome {
            Ok(s) => s,
            Err(source) => {
                return Err(RunError::Aborted {
                    step: k,
                    state: x,
                    source,
                    partial: Box::new(traj),
                })
            }
        };
        let u = &step.u_k + &u_r;
        let x_next = match plant.step(&x, &u) {
            Ok(next) => next,
            Err(source) => {
                return Err(RunError::Aborted {
                    step: k,
                    state: x,
                    source,
                    partial: Box::new(traj),
                })
            }
        };
        let mut plan = step.u_star.clone();
        for blk in 0..plan.len() / m {
            let mut view = plan.rows_mut(blk * m, m);
            view += &u_r;
        }
        traj.inputs.push(u);
        traj.costs.push(step.j_star);
        traj.statuses.push(step.status);
        traj.iterations.push(step.iterations);
        traj.plans.push(plan);
        traj.states.push(x_next.clone());
        if cfg.warm_start {
            let (next_horizon, _) = cfg.horizons_at(k + 1);
            guess = Some(InitialGuess::shifted(&step, n, m, next_horizon));
        }
        x = x_next;
    }
    Ok(traj)
}
