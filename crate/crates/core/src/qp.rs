//! Convex QP solver based on operator splitting (ADMM).
//!
//! Problems use the objective `zᵀHz + qᵀz + r` (no ½ factor). Inequality
//! rows, equality rows and optional bounds are stacked into a single
//! interval constraint `l ≤ A z ≤ u`; equality rows have `l = u`.

use std::fmt;

use nalgebra::Cholesky;

use crate::error::{MpcError, Result};
use crate::numerics::{inf_norm, max_asymmetry, vconcat, vstack, Matrix, Vector};

const SYMMETRY_TOL: f64 = 1e-10;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Equality rows get a stiffer penalty than inequality rows.
const RHO_EQ_SCALE: f64 = 1e3;
/// Step-size changes smaller than this factor do not trigger a refactorization.
const RHO_REFACTOR_RATIO: f64 = 5.0;
/// Largest factor a single rebalancing may change the step size by.
const RHO_MAX_STEP: f64 = 10.0;
const POLISH_REG: f64 = 1e-9;
const POLISH_REFINE_STEPS: usize = 5;
const POLISH_PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub q: Vector,
    pub r: f64,
    pub f: Matrix,
    pub g: Vector,
    pub f_eq: Matrix,
    pub g_eq: Vector,
    pub lb: Option<Vector>,
    pub ub: Option<Vector>,
}

impl QpProblem {
    /// Unconstrained problem `min zᵀHz + qᵀz`.
    pub fn new(h: Matrix, q: Vector) -> Self {
        let d = q.len();
        Self {
            h,
            q,
            r: 0.0,
            f: Matrix::zeros(0, d),
            g: Vector::zeros(0),
            f_eq: Matrix::zeros(0, d),
            g_eq: Vector::zeros(0),
            lb: None,
            ub: None,
        }
    }

    pub fn with_inequalities(mut self, f: Matrix, g: Vector) -> Self {
        self.f = f;
        self.g = g;
        self
    }

    pub fn with_equalities(mut self, f_eq: Matrix, g_eq: Vector) -> Self {
        self.f_eq = f_eq;
        self.g_eq = g_eq;
        self
    }

    pub fn with_bounds(mut self, lb: Option<Vector>, ub: Option<Vector>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_constant(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn has_bounds(&self) -> bool {
        self.lb.is_some() || self.ub.is_some()
    }

    /// Number of entries in the dual vector: inequalities, equalities, then
    /// one signed multiplier per coordinate when bounds are present.
    pub fn dual_dim(&self) -> usize {
        self.f.nrows() + self.f_eq.nrows() + if self.has_bounds() { self.dim() } else { 0 }
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        z.dot(&(&self.h * z)) + self.q.dot(z) + self.r
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.h.shape() != (d, d) {
            return Err(MpcError::shape(format!(
                "H is {}x{}, expected {d}x{d}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if max_asymmetry(&self.h) > SYMMETRY_TOL {
            return Err(MpcError::InvalidWeight("H is not symmetric".into()));
        }
        if self.f.ncols() != d || self.f.nrows() != self.g.len() {
            return Err(MpcError::shape("inequality block F, g is inconsistent"));
        }
        if self.f_eq.ncols() != d || self.f_eq.nrows() != self.g_eq.len() {
            return Err(MpcError::shape("equality block F_eq, g_eq is inconsistent"));
        }
        for b in [&self.lb, &self.ub].into_iter().flatten() {
            if b.len() != d {
                return Err(MpcError::shape("bound vector has wrong length"));
            }
        }
        if let (Some(lb), Some(ub)) = (&self.lb, &self.ub) {
            if lb.iter().zip(ub.iter()).any(|(l, u)| l > u) {
                return Err(MpcError::InvalidConfig("lb exceeds ub".into()));
            }
        }
        Ok(())
    }

    /// `(A, l, u)` of the interval form.
    fn stacked(&self) -> (Matrix, Vector, Vector) {
        let d = self.dim();
        let p = self.f.nrows();
        let mut parts = vec![&self.f, &self.f_eq];
        let eye = Matrix::identity(d, d);
        if self.has_bounds() {
            parts.push(&eye);
        }
        let a = vstack(&parts);
        let lower_ineq = Vector::from_element(p, f64::NEG_INFINITY);
        let mut l = vconcat(&[&lower_ineq, &self.g_eq]);
        let mut u = vconcat(&[&self.g, &self.g_eq]);
        if self.has_bounds() {
            let lb = self
                .lb
                .clone()
                .unwrap_or_else(|| Vector::from_element(d, f64::NEG_INFINITY));
            let ub = self
                .ub
                .clone()
                .unwrap_or_else(|| Vector::from_element(d, f64::INFINITY));
            l = vconcat(&[&l, &lb]);
            u = vconcat(&[&u, &ub]);
        }
        (a, l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Iterations between step-size rebalancing; 0 disables it.
    pub adapt_interval: usize,
    pub eps_infeasible: f64,
    /// Refine a converged iterate by solving the KKT system of its active set.
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adapt_interval: 50,
            eps_infeasible: 1e-8,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QpStatus::Optimal => "Optimal",
            QpStatus::MaxIterations => "MaxIterations",
            QpStatus::Infeasible => "Infeasible",
        };
        f.write_str(s)
    }
}

/// Initial iterate for [`solve_qp`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub primal: Vector,
    pub dual: Option<Vector>,
}

impl WarmStart {
    pub fn primal(z: Vector) -> Self {
        Self {
            primal: z,
            dual: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z_star: Vector,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Multipliers in the layout described by [`QpProblem::dual_dim`].
    pub duals: Vector,
    pub polished: bool,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            primal: self.z_star.clone(),
            dual: Some(self.duals.clone()),
        }
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }

    fn badness(&self) -> f64 {
        (self.primal / self.eps_primal).max(self.dual / self.eps_dual)
    }
}

struct Admm<'a> {
    p: Matrix,
    q: &'a Vector,
    a: Matrix,
    at: Matrix,
    l: Vector,
    u: Vector,
    is_eq: Vec<bool>,
    /// Row `i` of `a`, `l`, `u` is the original row times `row_scale[i]`.
    row_scale: Vector,
    settings: &'a QpSettings,
}

impl<'a> Admm<'a> {
    fn rho_vec(&self, rho: f64) -> Vector {
        Vector::from_iterator(
            self.l.len(),
            (0..self.l.len()).map(|i| {
                if self.is_eq[i] {
                    (rho * RHO_EQ_SCALE).min(RHO_MAX)
                } else if self.l[i].is_infinite() && self.u[i].is_infinite() {
                    RHO_MIN
                } else {
                    rho
                }
            }),
        )
    }

    fn factor(&self, rho: &Vector) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let d = self.p.nrows();
        let mut k = &self.p + Matrix::identity(d, d) * self.settings.sigma;
        let mut scaled = self.a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= rho[i];
        }
        k += &self.at * scaled;
        Cholesky::new(k).ok_or_else(|| {
            MpcError::NonConvex("KKT matrix is not positive definite (H indefinite?)".into())
        })
    }

    fn project(&self, v: &Vector) -> Vector {
        Vector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(i, x)| x.clamp(self.l[i], self.u[i])),
        )
    }

    fn residuals(&self, x: &Vector, z: &Vector, y: &Vector) -> Residuals {
        let s = self.settings;
        let ax = (&self.a * x).component_div(&self.row_scale);
        let z = z.component_div(&self.row_scale);
        let px = &self.p * x;
        let aty = &self.at * y;
        let primal = if z.is_empty() { 0.0 } else { inf_norm(&(&ax - &z)) };
        let dual = inf_norm(&(&px + self.q + &aty));
        Residuals {
            primal,
            dual,
            eps_primal: s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(&z)),
            eps_dual: s.eps_abs
                + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(self.q)),
        }
    }

    /// Farkas-type test on the dual increment.
    fn certifies_infeasibility(&self, dy: &Vector) -> bool {
        let norm = inf_norm(dy);
        if norm <= f64::MIN_POSITIVE {
            return false;
        }
        let eps = self.settings.eps_infeasible * norm;
        if inf_norm(&(&self.at * dy)) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let di = dy[i];
            let bound = if di > 0.0 {
                self.u[i]
            } else if di < 0.0 {
                self.l[i]
            } else {
                continue;
            };
            if bound.is_infinite() {
                if di.abs() > eps {
                    return false;
                }
                continue;
            }
            support += bound * di;
        }
        support < -eps
    }

    /// Solves the equality-constrained QP of the guessed active set. Rows
    /// whose multiplier comes out with the wrong sign are released and the
    /// system is solved again.
    fn polish(&self, z: &Vector, y: &Vector) -> Option<(Vector, Vector)> {
        let mut active: Vec<(usize, f64, i8)> = Vec::new();
        for i in 0..self.l.len() {
            if self.is_eq[i] {
                active.push((i, self.l[i], 0));
            } else if self.l[i].is_finite() && z[i] - self.l[i] < -y[i] {
                active.push((i, self.l[i], -1));
            } else if self.u[i].is_finite() && self.u[i] - z[i] < y[i] {
                active.push((i, self.u[i], 1));
            }
        }
        for _ in 0..POLISH_PASSES {
            let (x, mult) = self.solve_active(&active)?;
            let wrong: Vec<usize> = active
                .iter()
                .zip(mult.iter())
                .enumerate()
                .filter(|(_, (&(_, _, side), &yi))| match side {
                    -1 => yi > self.settings.eps_abs,
                    1 => yi < -self.settings.eps_abs,
                    _ => false,
                })
                .map(|(r, _)| r)
                .collect();
            if wrong.is_empty() {
                let mut y_full = Vector::zeros(self.l.len());
                for (&(i, _, _), &yi) in active.iter().zip(mult.iter()) {
                    y_full[i] = yi;
                }
                return Some((x, y_full));
            }
            active = active
                .into_iter()
                .enumerate()
                .filter(|(r, _)| !wrong.contains(r))
                .map(|(_, a)| a)
                .collect();
        }
        None
    }

    /// Regularized KKT solve with iterative refinement; returns the primal
    /// point and one multiplier per active row.
    fn solve_active(&self, active: &[(usize, f64, i8)]) -> Option<(Vector, Vector)> {
        let d = self.p.nrows();
        let k = active.len();
        let mut kkt = Matrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&self.p);
        let mut rhs = Vector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-self.q));
        for (r, &(i, target, _)) in active.iter().enumerate() {
            let row = self.a.row(i);
            kkt.view_mut((d + r, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + r), (d, 1)).copy_from(&row.transpose());
            rhs[d + r] = target;
        }
        let mut reg = kkt.clone();
        for i in 0..d {
            reg[(i, i)] += POLISH_REG;
        }
        for i in d..d + k {
            reg[(i, i)] -= POLISH_REG;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..POLISH_REFINE_STEPS {
            let resid = &rhs - &kkt * &sol;
            sol += lu.solve(&resid)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, d).into_owned(), sol.rows(d, k).into_owned()))
    }
}

/// Solves a convex QP by ADMM.
///
/// Errors only for malformed problems or an indefinite KKT matrix; solver
/// outcomes are reported through [`QpSolution::status`].
pub fn solve_qp(
    problem: &QpProblem,
    warm: Option<&WarmStart>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    problem.validate()?;
    let d = problem.dim();
    let (mut a, mut l, mut u) = problem.stacked();
    let mc = a.nrows();
    let is_eq = (0..mc).map(|i| l[i] == u[i]).collect();
    let row_scale = Vector::from_fn(mc, |i, _| {
        let norm = a.row(i).amax();
        if norm > 0.0 {
            1.0 / norm
        } else {
            1.0
        }
    });
    for i in 0..mc {
        a.row_mut(i).scale_mut(row_scale[i]);
        l[i] *= row_scale[i];
        u[i] *= row_scale[i];
    }
    let at = a.transpose();
    let admm = Admm {
        p: &problem.h * 2.0,
        q: &problem.q,
        a,
        at,
        l,
        u,
        is_eq,
        row_scale,
        settings,
    };

    let mut x = Vector::zeros(d);
    let mut y = Vector::zeros(mc);
    if let Some(w) = warm {
        if w.primal.len() != d {
            return Err(MpcError::shape(format!(
                "warm start has {} entries, problem has {d}",
                w.primal.len()
            )));
        }
        x.copy_from(&w.primal);
        if let Some(dual) = &w.dual {
            if dual.len() == mc {
                y = dual.component_div(&admm.row_scale);
            }
        }
    }
    let mut z = admm.project(&(&admm.a * &x));

    let mut rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
    let mut rho_v = admm.rho_vec(rho);
    let mut chol = admm.factor(&rho_v)?;
    let alpha = settings.alpha;

    let mut best = (x.clone(), z.clone(), y.clone(), f64::INFINITY);
    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iter;

    for iter in 1..=settings.max_iter {
        let rhs = &x * settings.sigma - admm.q + &admm.at * (rho_v.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &admm.a * &x_tilde;
        let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_next = admm.project(&(&z_relaxed + y.component_div(&rho_v)));
        let y_next = &y + rho_v.component_mul(&(&z_relaxed - &z_next));
        let dy = &y_next - &y;
        x = x_next;
        z = z_next;
        y = y_next;

        let res = admm.residuals(&x, &z, &y);
        if res.converged() {
            status = QpStatus::Optimal;
            iterations = iter;
            break;
        }
        if mc > 0 && admm.certifies_infeasibility(&dy) {
            status = QpStatus::Infeasible;
            iterations = iter;
            break;
        }
        let badness = res.badness();
        if badness < best.3 {
            best = (x.clone(), z.clone(), y.clone(), badness);
        }

        if settings.adapt_interval > 0 && iter % settings.adapt_interval == 0 && mc > 0 {
            let ax = &admm.a * &x;
            let prim_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let dual_scale = inf_norm(&(&admm.p * &x))
                .max(inf_norm(&(&admm.at * &y)))
                .max(inf_norm(admm.q))
                .max(1e-30);
            let ratio = (res.primal / prim_scale) / (res.dual / dual_scale).max(1e-30);
            let factor = ratio.sqrt().clamp(1.0 / RHO_MAX_STEP, RHO_MAX_STEP);
            let candidate = (rho * factor).clamp(RHO_MIN, RHO_MAX);
            if candidate > rho * RHO_REFACTOR_RATIO || candidate < rho / RHO_REFACTOR_RATIO {
                rho = candidate;
                rho_v = admm.rho_vec(rho);
                chol = admm.factor(&rho_v)?;
            }
        }
    }

    if status == QpStatus::MaxIterations {
        x = best.0;
        z = best.1;
        y = best.2;
    }

    let mut res = admm.residuals(&x, &z, &y);
    let mut polished = false;
    if status == QpStatus::Optimal && settings.polish {
        if let Some((xp, yp)) = admm.polish(&z, &y) {
            let zp = admm.project(&(&admm.a * &xp));
            let rp = admm.residuals(&xp, &zp, &yp);
            if rp.primal <= res.primal.max(1e-10) && rp.dual <= res.dual.max(1e-10) {
                x = xp;
                y = yp;
                res = rp;
                polished = true;
            }
        }
    }

    Ok(QpSolution {
        objective: problem.objective(&x),
        z_star: x,
        status,
        iterations,
        primal_residual: res.primal,
        dual_residual: res.dual,
        duals: y.component_mul(&admm.row_scale),
        polished,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    /// `‖2Hz + q + Fᵀλ + F_eqᵀν (+ bound multipliers)‖∞`
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal: f64,
    /// `maxᵢ |λᵢ (Fz - g)ᵢ|`, including active bounds.
    pub complementarity: f64,
    /// Largest wrong-sign inequality multiplier.
    pub dual_sign: f64,
}

pub fn kkt_residuals(problem: &QpProblem, z: &Vector, duals: &Vector) -> Result<KktResiduals> {
    problem.validate()?;
    if z.len() != problem.dim() || duals.len() != problem.dual_dim() {
        return Err(MpcError::shape(format!(
            "expected primal/dual of length {}/{}, got {}/{}",
            problem.dim(),
            problem.dual_dim(),
            z.len(),
            duals.len()
        )));
    }
    let (a, l, u) = problem.stacked();
    let stationarity = inf_norm(&(&problem.h * z * 2.0 + &problem.q + a.transpose() * duals));
    let az = &a * z;
    let p = problem.f.nrows();
    let mut primal = 0.0f64;
    let mut complementarity = 0.0f64;
    let mut dual_sign = 0.0f64;
    for i in 0..az.len() {
        let below = l[i] - az[i];
        let above = az[i] - u[i];
        primal = primal.max(below).max(above);
        let yi = duals[i];
        if i < p {
            complementarity = complementarity.max((yi * (az[i] - u[i])).abs());
            dual_sign = dual_sign.max(-yi);
        } else if l[i] != u[i] {
            let slack = if yi > 0.0 { az[i] - u[i] } else { az[i] - l[i] };
            if slack.is_finite() {
                complementarity = complementarity.max((yi * slack).abs());
            } else if yi != 0.0 {
                dual_sign = dual_sign.max(yi.abs());
            }
        }
    }
    Ok(KktResiduals {
        stationarity,
        primal,
        complementarity,
        dual_sign,
    })
}
