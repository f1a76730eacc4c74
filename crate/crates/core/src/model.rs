//! Discrete-time dynamics, polytopic sets and steady-state references.

use std::fmt;
use std::sync::Arc;

use crate::error::{MpcError, Result};
use crate::numerics::{finite_diff_jacobian, pseudo_inverse_apply, Matrix, Vector};

/// Default absolute tolerance for set membership.
pub const CONTAINS_TOL: f64 = 1e-8;

/// Anything that can be stepped forward one sample.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &Vector, u: &Vector) -> Result<Vector>;
}

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    a: Matrix,
    b: Matrix,
}

impl LtiModel {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(MpcError::shape(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(MpcError::shape(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// Steady input for a reference state: least-squares solution of
    /// `B u = (I - A) x_r`.
    pub fn steady_state_input(&self, x_r: &Vector) -> Result<SteadyState> {
        self.check_state(x_r)?;
        let n = self.a.nrows();
        let rhs = (Matrix::identity(n, n) - &self.a) * x_r;
        let input = pseudo_inverse_apply(&self.b, &rhs)?;
        let residual = (&rhs - &self.b * &input).norm();
        Ok(SteadyState { input, residual })
    }

    fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.a.nrows() {
            return Err(MpcError::shape(format!(
                "state has {} entries, model expects {}",
                x.len(),
                self.a.nrows()
            )));
        }
        Ok(())
    }
}

impl Dynamics for LtiModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_state(x)?;
        if u.len() != self.b.ncols() {
            return Err(MpcError::shape(format!(
                "input has {} entries, model expects {}",
                u.len(),
                self.b.ncols()
            )));
        }
        Ok(&self.a * x + &self.b * u)
    }
}

/// Result of a steady-state input computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub input: Vector,
    /// `‖x_r - f(x_r, u_r)‖₂`; nonzero when the reference is not an
    /// equilibrium of the model.
    pub residual: f64,
}

type StepFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type JacobianFn = dyn Fn(&Vector, &Vector) -> (Matrix, Matrix) + Send + Sync;

/// `x⁺ = f(x, u)` with an optional analytic Jacobian `(∂f/∂x, ∂f/∂u)`.
#[derive(Clone)]
pub struct NonlinearModel {
    n: usize,
    m: usize,
    step: Arc<StepFn>,
    jacobian: Option<Arc<JacobianFn>>,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl NonlinearModel {
    pub fn new<F>(n: usize, m: usize, step: F) -> Self
    where
        F: Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            step: Arc::new(step),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&Vector, &Vector) -> (Matrix, Matrix) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Drops the analytic Jacobian so callers fall back to finite differences.
    pub fn without_jacobian(mut self) -> Self {
        self.jacobian = None;
        self
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn pendulum(p: PendulumParams) -> Result<Self> {
        p.validate()?;
        let model = NonlinearModel::new(2, 1, move |x, u| p.step(x, u)).with_jacobian(
            move |x, _u| {
                let inertia = p.mass * p.length * p.length;
                let a = Matrix::from_row_slice(
                    2,
                    2,
                    &[
                        1.0,
                        p.sample_time,
                        -p.sample_time * p.gravity / p.length * x[0].cos(),
                        1.0 - p.sample_time * p.friction / inertia,
                    ],
                );
                let b = Matrix::from_row_slice(2, 1, &[0.0, p.sample_time / inertia]);
                (a, b)
            },
        );
        Ok(model)
    }

    /// Wraps linear dynamics so the nonlinear machinery can run on them.
    pub fn from_lti(lti: &LtiModel) -> Self {
        let (a, b) = (lti.a().clone(), lti.b().clone());
        let (ja, jb) = (a.clone(), b.clone());
        NonlinearModel::new(a.nrows(), b.ncols(), move |x, u| &a * x + &b * u)
            .with_jacobian(move |_, _| (ja.clone(), jb.clone()))
    }

    /// Error-coordinate dynamics `f_e(x_e, u_e) = f(x_e + x_r, u_e + u_r) - x_r`.
    pub fn shifted(&self, x_r: &Vector, u_r: &Vector) -> Self {
        let inner = self.clone();
        let (xs, us) = (x_r.clone(), u_r.clone());
        let mut out = NonlinearModel::new(self.n, self.m, move |xe, ue| {
            (inner.step)(&(xe + &xs), &(ue + &us)) - &xs
        });
        if let Some(jac) = self.jacobian.clone() {
            let (xs, us) = (x_r.clone(), u_r.clone());
            out = out.with_jacobian(move |xe, ue| jac(&(xe + &xs), &(ue + &us)));
        }
        out
    }

    /// `(∂f/∂x, ∂f/∂u)`, analytic when registered, forward differences otherwise.
    pub fn jacobians(&self, x: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        self.check(x, u)?;
        if let Some(j) = &self.jacobian {
            return Ok(j(x, u));
        }
        let jx = finite_diff_jacobian(|xx| self.step(xx, u), x)?;
        let ju = finite_diff_jacobian(|uu| self.step(x, uu), u)?;
        Ok((jx, ju))
    }

    /// Damped Gauss-Newton on `u ↦ f(x_r, u) - x_r`.
    pub fn steady_state_input(&self, x_r: &Vector, u_guess: &Vector) -> Result<SteadyState> {
        const MAX_ITER: usize = 100;
        const MAX_HALVINGS: usize = 20;
        const TOL: f64 = 1e-8;

        self.check(x_r, u_guess)?;
        let residual = |u: &Vector| -> Result<Vector> { Ok(self.step(x_r, u)? - x_r) };
        let mut u = u_guess.clone();
        let mut r = residual(&u)?;
        let mut r_norm = r.norm();
        for _ in 0..MAX_ITER {
            if r_norm <= TOL {
                return Ok(SteadyState {
                    input: u,
                    residual: r_norm,
                });
            }
            let (_, ju) = self.jacobians(x_r, &u)?;
            let delta = match pseudo_inverse_apply(&ju, &(-&r)) {
                Ok(d) => d,
                Err(_) => break,
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial = &u + &delta * t;
                let rt = residual(&trial)?;
                let rt_norm = rt.norm();
                if rt_norm < r_norm {
                    u = trial;
                    r = rt;
                    r_norm = rt_norm;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if r_norm <= TOL {
            return Ok(SteadyState {
                input: u,
                residual: r_norm,
            });
        }
        Err(MpcError::SteadyStateNotFound { residual: r_norm })
    }

    fn check(&self, x: &Vector, u: &Vector) -> Result<()> {
        if x.len() != self.n || u.len() != self.m {
            return Err(MpcError::shape(format!(
                "expected state/input of dimension {}/{}, got {}/{}",
                self.n,
                self.m,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }
}

impl Dynamics for NonlinearModel {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn step(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check(x, u)?;
        let next = (self.step)(x, u);
        if next.len() != self.n {
            return Err(MpcError::Evaluation(format!(
                "step returned {} entries, expected {}",
                next.len(),
                self.n
            )));
        }
        Ok(next)
    }
}

/// Damped simple pendulum discretized with forward Euler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub friction: f64,
    pub length: f64,
    pub gravity: f64,
    pub sample_time: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            friction: 1.0,
            length: 1.0,
            gravity: 9.8,
            sample_time: 0.1,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.length > 0.0 && self.sample_time > 0.0) {
            return Err(MpcError::InvalidConfig(
                "pendulum needs mass > 0, length > 0 and sample time > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        let inertia = self.mass * self.length * self.length;
        let accel = -(self.gravity / self.length) * x[0].sin() - self.friction / inertia * x[1]
            + u[0] / inertia;
        Vector::from_column_slice(&[x[0] + self.sample_time * x[1], x[1] + self.sample_time * accel])
    }

    /// Holding torque `M g l sin(θ)` for a resting angle.
    pub fn holding_torque(&self, angle: f64) -> f64 {
        self.mass * self.gravity * self.length * angle.sin()
    }
}

/// `{v : F v ≤ g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    f: Matrix,
    g: Vector,
}

impl Polytope {
    pub fn new(f: Matrix, g: Vector) -> Result<Self> {
        if f.nrows() != g.len() {
            return Err(MpcError::shape(format!(
                "F has {} rows, g has {} entries",
                f.nrows(),
                g.len()
            )));
        }
        if f.ncols() == 0 {
            return Err(MpcError::shape("polytope dimension must be at least 1"));
        }
        Ok(Self { f, g })
    }

    /// Axis-aligned box `lower ≤ v ≤ upper` written as `[I; -I] v ≤ [upper; -lower]`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(MpcError::shape("box bounds must have equal, nonzero length"));
        }
        let d = lower.len();
        let mut f = Matrix::zeros(2 * d, d);
        let mut g = Vector::zeros(2 * d);
        for i in 0..d {
            f[(i, i)] = 1.0;
            g[i] = upper[i];
            f[(d + i, i)] = -1.0;
            g[d + i] = -lower[i];
        }
        Polytope::new(f, g)
    }

    /// The whole space, encoded with zero rows.
    pub fn unconstrained(dim: usize) -> Self {
        Self {
            f: Matrix::zeros(0, dim),
            g: Vector::zeros(0),
        }
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn g(&self) -> &Vector {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn contains(&self, v: &Vector, tol: f64) -> Result<bool> {
        Ok(self.max_violation(v)? <= tol)
    }

    /// Largest `(F v - g)ᵢ`, clipped at zero.
    pub fn max_violation(&self, v: &Vector) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(MpcError::shape(format!(
                "point has {} entries, polytope lives in dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok((&self.f * v - &self.g).iter().fold(0.0, |acc, r| acc.max(*r)))
    }

    /// `{v : F v ≤ g - F c}`, i.e. the set expressed in coordinates centred at `c`.
    pub fn shifted(&self, c: &Vector) -> Result<Self> {
        if c.len() != self.dim() {
            return Err(MpcError::shape("shift has wrong dimension"));
        }
        Ok(Self {
            f: self.f.clone(),
            g: &self.g - &self.f * c,
        })
    }

    /// Per-coordinate `(lower, upper)` bounds implied by rows of the form `±e_i`.
    pub fn axis_bounds(&self) -> Vec<(Option<f64>, Option<f64>)> {
        let d = self.dim();
        let mut out = vec![(None, None); d];
        for (row, gi) in self.f.row_iter().zip(self.g.iter()) {
            let nz: Vec<usize> = (0..d).filter(|&j| row[j] != 0.0).collect();
            if let [j] = nz[..] {
                let coef = row[j];
                let bound = gi / coef;
                let slot = &mut out[j];
                if coef > 0.0 {
                    slot.1 = Some(slot.1.map_or(bound, |b: f64| b.min(bound)));
                } else {
                    slot.0 = Some(slot.0.map_or(bound, |b: f64| b.max(bound)));
                }
            }
        }
        out
    }
}
