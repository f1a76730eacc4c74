//! Sequential quadratic programming for problems of the form
//!
//! ```text
//! min  zᵀHz + qᵀz   s.t.  F z ≤ g,  c(z) = 0
//! ```
//!
//! Each iteration linearizes `c`, solves the QP subproblem with
//! [`solve_qp`], and backtracks on an ℓ1 merit function.

use std::fmt;
use std::sync::Arc;

use crate::error::{MpcError, Result};
use crate::model::{Dynamics, NonlinearModel};
use crate::numerics::{block_diag, finite_diff_jacobian, inf_norm, Matrix, Vector};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus, WarmStart};

type ResidualFn = dyn Fn(&Vector) -> Result<Vector> + Send + Sync;
type JacobianFn = dyn Fn(&Vector) -> Result<Matrix> + Send + Sync;

#[derive(Clone)]
pub struct NlpProblem {
    pub h: Matrix,
    pub q: Vector,
    pub f: Matrix,
    pub g: Vector,
    residual: Arc<ResidualFn>,
    jacobian: Option<Arc<JacobianFn>>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("dim", &self.q.len())
            .field("inequalities", &self.f.nrows())
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl NlpProblem {
    pub fn new<R>(h: Matrix, q: Vector, f: Matrix, g: Vector, residual: R) -> Self
    where
        R: Fn(&Vector) -> Result<Vector> + Send + Sync + 'static,
    {
        Self {
            h,
            q,
            f,
            g,
            residual: Arc::new(residual),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&Vector) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        z.dot(&(&self.h * z)) + self.q.dot(z)
    }

    pub fn residual(&self, z: &Vector) -> Result<Vector> {
        (self.residual)(z)
    }

    pub fn jacobian(&self, z: &Vector) -> Result<Matrix> {
        match &self.jacobian {
            Some(j) => j(z),
            None => finite_diff_jacobian(|zz| (self.residual)(zz), z),
        }
    }

    fn validate(&self, z0: &Vector) -> Result<()> {
        let d = self.dim();
        if self.h.shape() != (d, d) || self.f.ncols() != d || self.f.nrows() != self.g.len() {
            return Err(MpcError::shape("NLP data is inconsistent"));
        }
        if z0.len() != d {
            return Err(MpcError::shape(format!(
                "initial guess has {} entries, problem has {d}",
                z0.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpSettings {
    pub max_iter: usize,
    /// Bound on the KKT residual and the equality violation.
    pub tol: f64,
    pub step_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Lower bound of the merit penalty `μ`.
    pub merit_floor: f64,
    pub elastic_penalty: f64,
    pub qp: QpSettings,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            step_tol: 1e-8,
            armijo: 1e-4,
            max_backtracks: 30,
            merit_floor: 10.0,
            elastic_penalty: 1e4,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NlpStatus {
    Optimal,
    MaxIterations,
    LineSearchFailure,
}

impl fmt::Display for NlpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NlpStatus::Optimal => "Optimal",
            NlpStatus::MaxIterations => "MaxIterations",
            NlpStatus::LineSearchFailure => "LineSearchFailure",
        };
        f.write_str(s)
    }
}

/// Merit values around one accepted step, both under the same penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritStep {
    pub penalty: f64,
    pub before: f64,
    pub after: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub z_star: Vector,
    pub objective: f64,
    pub status: NlpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub eq_violation: f64,
    /// Set when some subproblem needed elastic slack on the equalities.
    pub elastic: bool,
    pub qp_iterations: usize,
    pub ineq_multipliers: Vector,
    pub eq_multipliers: Vector,
    pub merit_trace: Vec<MeritStep>,
}

struct Subproblem {
    step: Vector,
    ineq: Vector,
    eq: Vector,
    iterations: usize,
    elastic: bool,
}

fn solve_subproblem(
    p: &NlpProblem,
    z: &Vector,
    c: &Vector,
    jac: &Matrix,
    warm: Option<&WarmStart>,
    settings: &SqpSettings,
) -> Result<Subproblem> {
    let d = p.dim();
    let np = p.f.nrows();
    let ne = c.len();
    let grad = &p.h * z * 2.0 + &p.q;
    let slack = &p.g - &p.f * z;
    let qp = QpProblem::new(p.h.clone(), grad.clone())
        .with_inequalities(p.f.clone(), slack.clone())
        .with_equalities(jac.clone(), -c);
    let sol = solve_qp(&qp, warm, &settings.qp)?;
    if sol.status != QpStatus::Infeasible {
        return Ok(Subproblem {
            step: sol.z_star,
            ineq: sol.duals.rows(0, np).into_owned(),
            eq: sol.duals.rows(np, ne).into_owned(),
            iterations: sol.iterations,
            elastic: false,
        });
    }

    // J s - p + n = -c with p, n >= 0 penalized linearly
    let h_el = block_diag(&[&p.h, &Matrix::zeros(2 * ne, 2 * ne)]);
    let mut q_el = Vector::from_element(d + 2 * ne, settings.elastic_penalty);
    q_el.rows_mut(0, d).copy_from(&grad);
    let mut f_el = Matrix::zeros(np, d + 2 * ne);
    f_el.view_mut((0, 0), (np, d)).copy_from(&p.f);
    let mut eq_el = Matrix::zeros(ne, d + 2 * ne);
    eq_el.view_mut((0, 0), (ne, d)).copy_from(jac);
    eq_el.view_mut((0, d), (ne, ne)).fill_with_identity();
    eq_el.view_mut((0, d), (ne, ne)).neg_mut();
    eq_el.view_mut((0, d + ne), (ne, ne)).fill_with_identity();
    let mut lb = Vector::zeros(d + 2 * ne);
    lb.rows_mut(0, d).fill(f64::NEG_INFINITY);
    let elastic = QpProblem::new(h_el, q_el)
        .with_inequalities(f_el, slack)
        .with_equalities(eq_el, -c)
        .with_bounds(Some(lb), None);
    let sol_el = solve_qp(&elastic, None, &settings.qp)?;
    Ok(Subproblem {
        step: sol_el.z_star.rows(0, d).into_owned(),
        ineq: sol_el.duals.rows(0, np).into_owned(),
        eq: sol_el.duals.rows(np, ne).into_owned(),
        iterations: sol.iterations + sol_el.iterations,
        elastic: true,
    })
}

pub fn solve_nlp(p: &NlpProblem, z0: &Vector, settings: &SqpSettings) -> Result<NlpSolution> {
    p.validate(z0)?;
    let np = p.f.nrows();
    let merit = |z: &Vector, c: &Vector, mu: f64| p.objective(z) + mu * c.lp_norm(1);

    let mut z = z0.clone();
    let mut c = p.residual(&z)?;
    let mut mu = settings.merit_floor;
    let mut warm: Option<WarmStart> = None;
    let mut out = NlpSolution {
        z_star: z.clone(),
        objective: p.objective(&z),
        status: NlpStatus::MaxIterations,
        iterations: 0,
        kkt_residual: f64::INFINITY,
        eq_violation: inf_norm(&c),
        elastic: false,
        qp_iterations: 0,
        ineq_multipliers: Vector::zeros(np),
        eq_multipliers: Vector::zeros(c.len()),
        merit_trace: Vec::new(),
    };

    for iter in 0..settings.max_iter {
        let jac = p.jacobian(&z)?;
        if jac.shape() != (c.len(), z.len()) {
            return Err(MpcError::shape("Jacobian shape does not match the residual"));
        }
        let sub = solve_subproblem(p, &z, &c, &jac, warm.as_ref(), settings)?;
        out.qp_iterations += sub.iterations;
        out.elastic |= sub.elastic;

        let grad = &p.h * &z * 2.0 + &p.q;
        let fz_g = &p.f * &z - &p.g;
        let stationarity = inf_norm(&(&grad + p.f.transpose() * &sub.ineq + jac.transpose() * &sub.eq));
        let complementarity = sub
            .ineq
            .iter()
            .zip(fz_g.iter())
            .fold(0.0f64, |acc, (l, s)| acc.max((l * s).abs()));
        let infeasibility = fz_g.iter().fold(0.0f64, |acc, s| acc.max(*s));
        let kkt = stationarity.max(complementarity).max(infeasibility);
        let eq_violation = inf_norm(&c);

        out.iterations = iter;
        out.kkt_residual = kkt;
        out.eq_violation = eq_violation;
        out.ineq_multipliers = sub.ineq.clone();
        out.eq_multipliers = sub.eq.clone();

        let small_step = inf_norm(&sub.step) <= settings.step_tol;
        if kkt <= settings.tol && eq_violation <= settings.tol {
            out.status = NlpStatus::Optimal;
            break;
        }
        if small_step {
            out.status = NlpStatus::LineSearchFailure;
            break;
        }

        mu = mu.max(2.0 * inf_norm(&sub.eq));
        let phi0 = merit(&z, &c, mu);
        let slope = (grad.dot(&sub.step) - mu * c.lp_norm(1)).min(0.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let trial = &z + &sub.step * t;
            let c_trial = p.residual(&trial)?;
            let phi = merit(&trial, &c_trial, mu);
            if phi <= phi0 + settings.armijo * t * slope {
                accepted = Some((trial, c_trial, phi));
                break;
            }
            t *= 0.5;
        }
        let Some((z_next, c_next, phi)) = accepted else {
            out.status = NlpStatus::LineSearchFailure;
            break;
        };
        out.merit_trace.push(MeritStep {
            penalty: mu,
            before: phi0,
            after: phi,
            step_length: t,
        });
        z = z_next;
        c = c_next;
        out.iterations = iter + 1;
        out.eq_violation = inf_norm(&c);
        warm = (!sub.elastic).then(|| WarmStart {
            primal: Vector::zeros(z.len()),
            dual: Some(crate::numerics::vconcat(&[&sub.ineq, &sub.eq])),
        });
    }

    out.objective = p.objective(&z);
    out.z_star = z;
    Ok(out)
}

/// Equality residual of the multiple-shooting MPC problem.
///
/// `z` stacks `(x_0, …, x_N, u_0, …, u_{N-1})`; the residual stacks
/// `x_0 - x_k` followed by `x_{i+1} - f(x_i, u_i)`.
#[derive(Debug, Clone)]
pub struct DynamicsResidual {
    model: NonlinearModel,
    x_k: Vector,
    horizon: usize,
}

impl DynamicsResidual {
    pub fn new(model: &NonlinearModel, x_k: &Vector, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(MpcError::InvalidHorizon("prediction horizon must be at least 1".into()));
        }
        if x_k.len() != model.state_dim() {
            return Err(MpcError::shape("current state has wrong dimension"));
        }
        Ok(Self {
            model: model.clone(),
            x_k: x_k.clone(),
            horizon,
        })
    }

    /// Length of the decision vector, `n(N+1) + mN`.
    pub fn dim(&self) -> usize {
        let (n, m) = (self.model.state_dim(), self.model.input_dim());
        n * (self.horizon + 1) + m * self.horizon
    }

    fn blocks(&self, z: &Vector) -> Result<(Vec<Vector>, Vec<Vector>)> {
        if z.len() != self.dim() {
            return Err(MpcError::shape(format!(
                "decision vector has {} entries, expected {}",
                z.len(),
                self.dim()
            )));
        }
        let (n, m, big_n) = (self.model.state_dim(), self.model.input_dim(), self.horizon);
        let xs = (0..=big_n).map(|i| z.rows(i * n, n).into_owned()).collect();
        let off = n * (big_n + 1);
        let us = (0..big_n).map(|i| z.rows(off + i * m, m).into_owned()).collect();
        Ok((xs, us))
    }

    pub fn eval(&self, z: &Vector) -> Result<Vector> {
        let (xs, us) = self.blocks(z)?;
        let n = self.model.state_dim();
        let mut out = Vector::zeros(n * (self.horizon + 1));
        out.rows_mut(0, n).copy_from(&(&xs[0] - &self.x_k));
        for i in 0..self.horizon {
            let next = self.model.step(&xs[i], &us[i])?;
            out.rows_mut((i + 1) * n, n).copy_from(&(&xs[i + 1] - next));
        }
        Ok(out)
    }

    /// Block-sparse Jacobian built from the model's `(∂f/∂x, ∂f/∂u)`.
    pub fn jacobian(&self, z: &Vector) -> Result<Matrix> {
        let (xs, us) = self.blocks(z)?;
        let (n, m) = (self.model.state_dim(), self.model.input_dim());
        let off = n * (self.horizon + 1);
        let mut jac = Matrix::zeros(off, self.dim());
        jac.view_mut((0, 0), (off, off)).fill_with_identity();
        for i in 0..self.horizon {
            let (ja, jb) = self.model.jacobians(&xs[i], &us[i])?;
            jac.view_mut(((i + 1) * n, i * n), (n, n)).copy_from(&(-ja));
            jac.view_mut(((i + 1) * n, off + i * m), (n, m)).copy_from(&(-jb));
        }
        Ok(jac)
    }
}

/// Residual map of the dynamics equalities for horizon `N` from state `x_k`.
pub fn build_feq(model: &NonlinearModel, x_k: &Vector, horizon: usize) -> Result<DynamicsResidual> {
    DynamicsResidual::new(model, x_k, horizon)
}
