//! Feasible-set diagnostics, persistent feasibility along a closed loop and
//! the Lyapunov decrease monitor.

use crate::condense::{build_prediction, stack_constraints};
use crate::controller::{tracking_transform, MpcConfig, Plant, Trajectory};
use crate::error::{MpcError, Result};
use crate::model::{Dynamics, LtiModel, CONTAINS_TOL};
use crate::numerics::{block_diag, vconcat, vstack, Matrix, Vector};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

/// Phase-I slack at or below which a state counts as feasible.
pub const PHASE1_TOL: f64 = 1e-6;
const PHASE1_REG: f64 = 1e-8;
/// Costs below this are treated as numerically zero by the Lyapunov monitor.
pub const LYAPUNOV_FLOOR: f64 = 1e-9;
const LYAPUNOV_DECREASE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Minimized uniform relaxation of the constraints.
    pub phase1_slack: f64,
    /// Input sequence (`m N` entries) attaining `phase1_slack`.
    pub witness: Option<Vector>,
}

impl FeasibilityReport {
    fn outside() -> Self {
        Self {
            feasible: false,
            phase1_slack: f64::INFINITY,
            witness: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub values: Vec<f64>,
    pub deltas: Vec<f64>,
    pub violations: Vec<usize>,
}

impl LyapunovReport {
    pub fn from_values(values: &[f64]) -> Self {
        let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let violations = deltas
            .iter()
            .enumerate()
            .filter(|&(i, &d)| values[i] >= LYAPUNOV_FLOOR && d >= -LYAPUNOV_DECREASE_TOL)
            .map(|(i, _)| i)
            .collect();
        Self {
            values: values.to_vec(),
            deltas,
            violations,
        }
    }

    pub fn is_decreasing(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Rolls `model` out from `x_k` under `inputs` and checks every input, every
/// predicted state and the terminal state against the sets of `cfg`.
pub fn is_control_sequence_feasible<D: Dynamics>(model: &D, cfg: &MpcConfig, x_k: &Vector, inputs: &Vector) -> bool {
    let (n, m) = (model.state_dim(), model.input_dim());
    if x_k.len() != n || m == 0 || inputs.len() != m * cfg.horizon {
        return false;
    }
    let within = |set: &crate::model::Polytope, v: &Vector| set.contains(v, CONTAINS_TOL).unwrap_or(false);
    if !within(&cfg.x_set, x_k) {
        return false;
    }
    let mut x = x_k.clone();
    for i in 0..cfg.horizon {
        let u = inputs.rows(i * m, m).into_owned();
        if !within(&cfg.u_set, &u) {
            return false;
        }
        x = match model.step(&x, &u) {
            Ok(next) => next,
            Err(_) => return false,
        };
        if !within(&cfg.x_set, &x) {
            return false;
        }
    }
    cfg.terminal_set.as_ref().is_none_or(|t| within(t, &x))
}

/// Decides whether some admissible input sequence keeps the predicted
/// states inside the constraint sets, by minimizing a uniform slack `s`.
pub fn is_state_feasible(model: &LtiModel, cfg: &MpcConfig, x_k: &Vector) -> Result<FeasibilityReport> {
    let (n, m) = (model.state_dim(), model.input_dim());
    if x_k.len() != n {
        return Err(MpcError::shape("state dimension does not match the model"));
    }
    if !cfg.x_set.contains(x_k, CONTAINS_TOL)? {
        return Ok(FeasibilityReport::outside());
    }
    let horizon = cfg.horizon;
    let pm = build_prediction(model, horizon)?;
    let c = stack_constraints(&cfg.x_set, &cfg.u_set, cfg.terminal_set.as_ref(), horizon)?;
    let d = m * horizon;

    // decision (U, s): F_X B_U U - s ≤ g_X - F_X A_X x_k, F_U U - s ≤ g_U, -s ≤ 0
    let state_rows = &c.f_x * &pm.b_u;
    let state_rhs = &c.g_x - &c.f_x * (&pm.a_x * x_k);
    let lhs = vstack(&[&state_rows, &c.f_u]);
    let mut f = Matrix::zeros(lhs.nrows() + 1, d + 1);
    f.view_mut((0, 0), (lhs.nrows(), d)).copy_from(&lhs);
    for i in 0..lhs.nrows() {
        f[(i, d)] = -1.0;
    }
    f[(lhs.nrows(), d)] = -1.0;
    let g = vconcat(&[&state_rhs, &c.g_u, &Vector::zeros(1)]);

    let h = block_diag(&[&(Matrix::identity(d, d) * PHASE1_REG), &Matrix::from_element(1, 1, PHASE1_REG)]);
    let mut q = Vector::zeros(d + 1);
    q[d] = 1.0;
    let qp = QpProblem::new(h, q).with_inequalities(f, g);
    let settings = QpSettings {
        max_iter: 50_000,
        ..cfg.qp
    };
    let sol = solve_qp(&qp, None, &settings)?;
    if sol.status == QpStatus::Infeasible {
        return Err(MpcError::SolverFailure {
            state: x_k.iter().copied().collect(),
            status: "phase-I program reported infeasible".into(),
        });
    }
    let witness = sol.z_star.rows(0, d).into_owned();
    let violation = &lhs * &witness - vconcat(&[&state_rhs, &c.g_u]);
    let slack = violation.iter().copied().fold(0.0, f64::max);
    let feasible = slack <= PHASE1_TOL;
    Ok(FeasibilityReport {
        feasible,
        phase1_slack: slack,
        witness: Some(witness),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceReport {
    /// One report per visited state.
    pub reports: Vec<FeasibilityReport>,
    /// Indices of states found infeasible.
    pub infeasible: Vec<usize>,
}

impl PersistenceReport {
    pub fn all_feasible(&self) -> bool {
        self.infeasible.is_empty()
    }
}

/// Runs the phase-I check at every state of `traj`. Tracking runs are
/// checked in error coordinates with the shifted sets.
pub fn persistent_feasibility_check(traj: &Trajectory, model: &LtiModel, cfg: &MpcConfig) -> Result<PersistenceReport> {
    let (x_r, check_cfg) = match &cfg.reference {
        Some(x_r) => {
            let setup = tracking_transform(cfg, &Plant::Lti(model.clone()), x_r)?;
            (x_r.clone(), setup.error_config(cfg))
        }
        None => (Vector::zeros(model.state_dim()), cfg.clone()),
    };
    let mut reports = Vec::with_capacity(traj.states.len());
    let mut infeasible = Vec::new();
    for (k, x) in traj.states.iter().enumerate() {
        let report = is_state_feasible(model, &check_cfg, &(x - &x_r))?;
        if !report.feasible {
            infeasible.push(k);
        }
        reports.push(report);
    }
    Ok(PersistenceReport { reports, infeasible })
}

/// Checks `J*_{k+1} - J*_k < 0` along the recorded optimal costs.
pub fn lyapunov_monitor(traj: &Trajectory) -> LyapunovReport {
    LyapunovReport::from_values(&traj.costs)
}
