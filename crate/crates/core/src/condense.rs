//! Batch prediction matrices and the two QP forms of linear MPC.
//!
//! The sparse form optimizes over `z = (X, U)` with the dynamics as
//! equality rows; the condensed form eliminates the states through
//! `X = A_X x + B_U U` and optimizes over `U` alone.

use crate::error::{MpcError, Result};
use crate::model::{Dynamics, LtiModel, Polytope};
use crate::numerics::{block_diag, max_asymmetry, vconcat, vstack, Matrix, Vector};
use crate::qp::QpProblem;

const SYMMETRY_TOL: f64 = 1e-10;

/// `X = A_X x + B_U U` over a horizon of `N` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub a_x: Matrix,
    pub b_u: Matrix,
    pub horizon: usize,
}

impl PredictionMatrices {
    pub fn state_dim(&self) -> usize {
        self.a_x.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols() / self.horizon
    }

    /// Stacked predicted states for an input sequence.
    pub fn predict(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        if x.len() != self.a_x.ncols() || u.len() != self.b_u.ncols() {
            return Err(MpcError::shape("prediction inputs have wrong length"));
        }
        Ok(&self.a_x * x + &self.b_u * u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedWeights {
    pub q_x: Matrix,
    pub r_u: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedConstraints {
    pub f_x: Matrix,
    pub g_x: Vector,
    pub f_u: Matrix,
    pub g_u: Vector,
}

pub fn build_prediction(model: &LtiModel, horizon: usize) -> Result<PredictionMatrices> {
    if horizon == 0 {
        return Err(MpcError::InvalidHorizon("prediction horizon must be at least 1".into()));
    }
    let (n, m) = (model.state_dim(), model.input_dim());
    let (a, b) = (model.a(), model.b());

    // powers[i] = A^i
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(Matrix::identity(n, n));
    for i in 1..=horizon {
        let next = a * &powers[i - 1];
        powers.push(next);
    }
    let mut a_x = Matrix::zeros(n * (horizon + 1), n);
    for (i, p) in powers.iter().enumerate() {
        a_x.view_mut((i * n, 0), (n, n)).copy_from(p);
    }
    let impulse: Vec<Matrix> = powers[..horizon].iter().map(|p| p * b).collect();
    let mut b_u = Matrix::zeros(n * (horizon + 1), m * horizon);
    for i in 1..=horizon {
        for j in 0..i {
            b_u.view_mut((i * n, j * m), (n, m))
                .copy_from(&impulse[i - j - 1]);
        }
    }
    Ok(PredictionMatrices { a_x, b_u, horizon })
}

/// `Q_X = diag(Q, …, Q, Q_N)` and `R_U = diag(R, …, R)`.
pub fn build_weights(q: &Matrix, r: &Matrix, q_n: &Matrix, horizon: usize) -> Result<StackedWeights> {
    if horizon == 0 {
        return Err(MpcError::InvalidHorizon("prediction horizon must be at least 1".into()));
    }
    for (name, w) in [("Q", q), ("R", r), ("Q_N", q_n)] {
        if max_asymmetry(w) > SYMMETRY_TOL {
            return Err(MpcError::InvalidWeight(format!("{name} is not symmetric")));
        }
    }
    if q.shape() != q_n.shape() {
        return Err(MpcError::InvalidWeight("Q and Q_N differ in size".into()));
    }
    let mut state_blocks: Vec<&Matrix> = vec![q; horizon];
    state_blocks.push(q_n);
    let input_blocks: Vec<&Matrix> = vec![r; horizon];
    Ok(StackedWeights {
        q_x: block_diag(&state_blocks),
        r_u: block_diag(&input_blocks),
    })
}

/// Replicates the state set over `N + 1` blocks (the last replaced by
/// `terminal` when given) and the input set over `N` blocks.
pub fn stack_constraints(
    x_set: &Polytope,
    u_set: &Polytope,
    terminal: Option<&Polytope>,
    horizon: usize,
) -> Result<StackedConstraints> {
    if horizon == 0 {
        return Err(MpcError::InvalidHorizon("prediction horizon must be at least 1".into()));
    }
    let last = terminal.unwrap_or(x_set);
    if last.dim() != x_set.dim() {
        return Err(MpcError::shape(format!(
            "terminal set has dimension {}, state dimension is {}",
            last.dim(),
            x_set.dim()
        )));
    }
    let mut fx: Vec<&Matrix> = vec![x_set.f(); horizon];
    fx.push(last.f());
    let mut gx: Vec<&Vector> = vec![x_set.g(); horizon];
    gx.push(last.g());
    let fu: Vec<&Matrix> = vec![u_set.f(); horizon];
    let gu: Vec<&Vector> = vec![u_set.g(); horizon];
    Ok(StackedConstraints {
        f_x: block_diag(&fx),
        g_x: vconcat(&gx),
        f_u: block_diag(&fu),
        g_u: vconcat(&gu),
    })
}

fn check_consistent(pm: &PredictionMatrices, w: &StackedWeights, c: &StackedConstraints, x_k: &Vector) -> Result<()> {
    let nx = pm.a_x.nrows();
    let nu = pm.b_u.ncols();
    if x_k.len() != pm.a_x.ncols() {
        return Err(MpcError::shape("current state has wrong dimension"));
    }
    if w.q_x.shape() != (nx, nx) || w.r_u.shape() != (nu, nu) {
        return Err(MpcError::shape("stacked weights do not match the prediction matrices"));
    }
    if c.f_x.ncols() != nx || c.f_u.ncols() != nu {
        return Err(MpcError::shape("stacked constraints do not match the prediction matrices"));
    }
    Ok(())
}

/// QP over `z = (X, U)`: `H = diag(Q_X, R_U)`, `F = diag(F_X, F_U)`,
/// `F_eq = [I, -B_U]`, `g_eq = A_X x_k`.
pub fn assemble_sparse_qp(
    pm: &PredictionMatrices,
    w: &StackedWeights,
    c: &StackedConstraints,
    x_k: &Vector,
) -> Result<QpProblem> {
    check_consistent(pm, w, c, x_k)?;
    let nx = pm.a_x.nrows();
    let h = block_diag(&[&w.q_x, &w.r_u]);
    let f = block_diag(&[&c.f_x, &c.f_u]);
    let g = vconcat(&[&c.g_x, &c.g_u]);
    let mut f_eq = Matrix::zeros(nx, h.ncols());
    f_eq.view_mut((0, 0), (nx, nx)).fill_with_identity();
    f_eq.view_mut((0, nx), (nx, pm.b_u.ncols())).copy_from(&(-&pm.b_u));
    let g_eq = &pm.a_x * x_k;
    let d = h.ncols();
    Ok(QpProblem::new(h, Vector::zeros(d))
        .with_inequalities(f, g)
        .with_equalities(f_eq, g_eq))
}

/// QP over `U`: `H = B_UᵀQ_X B_U + R_U`, `q = 2 B_UᵀQ_X A_X x_k`,
/// `r = x_kᵀA_XᵀQ_X A_X x_k`.
pub fn assemble_condensed_qp(
    pm: &PredictionMatrices,
    w: &StackedWeights,
    c: &StackedConstraints,
    x_k: &Vector,
) -> Result<QpProblem> {
    check_consistent(pm, w, c, x_k)?;
    let bt_q = pm.b_u.transpose() * &w.q_x;
    let mut h = &bt_q * &pm.b_u + &w.r_u;
    // round-off can leave H slightly asymmetric
    let ht = h.transpose();
    h = (h + ht) * 0.5;
    let free = &pm.a_x * x_k;
    let q = &bt_q * &free * 2.0;
    let r = free.dot(&(&w.q_x * &free));
    let f = vstack(&[&(&c.f_x * &pm.b_u), &c.f_u]);
    let g = vconcat(&[&(&c.g_x - &c.f_x * &free), &c.g_u]);
    Ok(QpProblem::new(h, q).with_inequalities(f, g).with_constant(r))
}

/// Restricts a QP to its leading `keep` variables, fixing the rest to zero.
///
/// Inequality rows left with no nonzero coefficient and a nonnegative
/// right-hand side are dropped.
pub fn fix_trailing_to_zero(qp: &QpProblem, keep: usize) -> Result<QpProblem> {
    let d = qp.dim();
    if keep == 0 || keep > d {
        return Err(MpcError::InvalidHorizon(format!(
            "cannot keep {keep} of {d} decision variables"
        )));
    }
    let f_cols = qp.f.columns(0, keep).into_owned();
    let rows: Vec<usize> = (0..f_cols.nrows())
        .filter(|&i| !(f_cols.row(i).iter().all(|v| *v == 0.0) && qp.g[i] >= 0.0))
        .collect();
    let f = f_cols.select_rows(rows.iter());
    let g = qp.g.select_rows(rows.iter());
    Ok(QpProblem {
        h: qp.h.view((0, 0), (keep, keep)).into_owned(),
        q: qp.q.rows(0, keep).into_owned(),
        r: qp.r,
        f,
        g,
        f_eq: qp.f_eq.columns(0, keep).into_owned(),
        g_eq: qp.g_eq.clone(),
        lb: qp.lb.as_ref().map(|b| b.rows(0, keep).into_owned()),
        ub: qp.ub.as_ref().map(|b| b.rows(0, keep).into_owned()),
    })
}

/// Keeps the first `N_C` input blocks of a condensed QP free and fixes the
/// remaining `N - N_C` blocks to zero.
pub fn reduce_control_horizon(qp: &QpProblem, horizon: usize, control_horizon: usize) -> Result<QpProblem> {
    if control_horizon == 0 || control_horizon > horizon {
        return Err(MpcError::InvalidHorizon(format!(
            "control horizon {control_horizon} must lie in 1..={horizon}"
        )));
    }
    if !qp.dim().is_multiple_of(horizon) {
        return Err(MpcError::shape("decision vector is not a whole number of input blocks"));
    }
    if control_horizon == horizon {
        return Ok(qp.clone());
    }
    let m = qp.dim() / horizon;
    fix_trailing_to_zero(qp, m * control_horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{solve_qp, QpSettings, QpStatus};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn scalar(a: f64, b: f64) -> LtiModel {
        LtiModel::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, b)).unwrap()
    }

    fn example_lti() -> LtiModel {
        LtiModel::new(
            Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.4, 0.8]),
            Matrix::from_row_slice(2, 1, &[0.1, 0.01]),
        )
        .unwrap()
    }

    fn one() -> Matrix {
        Matrix::from_element(1, 1, 1.0)
    }

    #[test]
    fn one_step_prediction() {
        let model = example_lti();
        let pm = build_prediction(&model, 1).unwrap();
        assert_eq!(pm.a_x.rows(0, 2), Matrix::identity(2, 2));
        assert_eq!(pm.a_x.rows(2, 2), *model.a());
        assert_eq!(pm.b_u.rows(0, 2), Matrix::zeros(2, 1));
        assert_eq!(pm.b_u.rows(2, 2), *model.b());
        assert!(matches!(build_prediction(&model, 0), Err(MpcError::InvalidHorizon(_))));
    }

    #[test]
    fn two_step_blocks() {
        let pm = build_prediction(&example_lti(), 2).unwrap();
        let a2 = pm.a_x.rows(4, 2).into_owned();
        let expected = Matrix::from_row_slice(2, 2, &[0.73, 0.34, -0.68, 0.56]);
        assert!((a2 - expected).amax() < 1e-12);
        let ab = pm.b_u.view((4, 0), (2, 1)).into_owned();
        assert!((ab - Matrix::from_row_slice(2, 1, &[0.092, -0.032])).amax() < 1e-12);
        assert!((pm.b_u.view((4, 1), (2, 1)) - example_lti().b()).amax() < 1e-15);
    }

    #[test]
    fn identity_dynamics_powers() {
        let model = LtiModel::new(Matrix::identity(2, 2), Matrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap();
        let pm = build_prediction(&model, 3).unwrap();
        for i in 0..4 {
            assert_eq!(pm.a_x.rows(2 * i, 2), Matrix::identity(2, 2));
        }
    }

    #[test]
    fn weight_examples() {
        let w = build_weights(&Matrix::identity(2, 2), &one(), &Matrix::identity(2, 2), 5).unwrap();
        assert_eq!(w.q_x, Matrix::identity(12, 12));
        assert_eq!(w.r_u, Matrix::identity(5, 5));
        let w = build_weights(&(one() * 2.0), &(one() * 4.0), &(one() * 3.0), 1).unwrap();
        assert_eq!(w.q_x, Matrix::from_diagonal(&v(&[2.0, 3.0])));
        assert_eq!(w.r_u, one() * 4.0);
        let w = build_weights(&Matrix::identity(2, 2), &one(), &Matrix::zeros(2, 2), 2).unwrap();
        assert_eq!(w.q_x.view((4, 4), (2, 2)), Matrix::zeros(2, 2));
        assert!(w.q_x.symmetric_eigenvalues().iter().all(|e| *e >= 0.0));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(build_weights(&asym, &one(), &asym, 2), Err(MpcError::InvalidWeight(_))));
    }

    #[test]
    fn stacked_constraint_examples() {
        let x_set = Polytope::from_box(&[-10.0, -10.0], &[10.0, 10.0]).unwrap();
        let u_set = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let c = stack_constraints(&x_set, &u_set, None, 2).unwrap();
        assert_eq!(c.f_x.shape(), (12, 6));
        assert_eq!(c.g_x, Vector::from_element(12, 10.0));
        assert_eq!(c.f_u.shape(), (4, 2));
        assert_eq!(c.g_u, Vector::from_element(4, 1.0));

        let unit = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let c = stack_constraints(&unit, &unit, None, 1).unwrap();
        assert_eq!(c.f_x.shape(), (4, 2));
        assert_eq!(c.f_u.shape(), (2, 1));

        let term = Polytope::new(Matrix::identity(2, 2), Vector::from_element(2, 0.5)).unwrap();
        let c = stack_constraints(&x_set, &u_set, Some(&term), 2).unwrap();
        assert_eq!(c.g_x.rows(8, 2), Vector::from_element(2, 0.5));
        assert_eq!(c.f_x.shape(), (10, 6));

        let bad = Polytope::from_box(&[0.0], &[1.0]).unwrap();
        assert!(matches!(stack_constraints(&x_set, &u_set, Some(&bad), 2), Err(MpcError::Shape(_))));
    }

    fn scalar_problem(x_k: f64) -> (PredictionMatrices, StackedWeights, StackedConstraints, Vector) {
        let model = scalar(1.0, 1.0);
        let pm = build_prediction(&model, 1).unwrap();
        let w = build_weights(&one(), &one(), &one(), 1).unwrap();
        let c = stack_constraints(&Polytope::unconstrained(1), &Polytope::unconstrained(1), None, 1).unwrap();
        (pm, w, c, v(&[x_k]))
    }

    #[test]
    fn sparse_scalar_example() {
        let (pm, w, c, x) = scalar_problem(1.0);
        let qp = assemble_sparse_qp(&pm, &w, &c, &x).unwrap();
        assert_eq!(qp.g_eq, v(&[1.0, 1.0]));
        assert_eq!(qp.f_eq, Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, -1.0]));
        assert_eq!(qp.q, Vector::zeros(3));
        let qp0 = assemble_sparse_qp(&pm, &w, &c, &v(&[0.0])).unwrap();
        assert_eq!(qp0.g_eq, Vector::zeros(2));
    }

    #[test]
    fn condensed_scalar_example() {
        let (pm, w, c, x) = scalar_problem(3.0);
        let qp = assemble_condensed_qp(&pm, &w, &c, &x).unwrap();
        assert_eq!(qp.h, Matrix::from_element(1, 1, 2.0));
        assert_eq!(qp.q, v(&[6.0]));
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z_star[0] + 1.5).abs() < 1e-6);
        let qp0 = assemble_condensed_qp(&pm, &w, &c, &v(&[0.0])).unwrap();
        assert_eq!(qp0.q, v(&[0.0]));
        assert_eq!(qp0.r, 0.0);
    }

    #[test]
    fn condensed_hessian_dominates_input_weight() {
        let model = example_lti();
        let pm = build_prediction(&model, 4).unwrap();
        let w = build_weights(&Matrix::identity(2, 2), &one(), &Matrix::identity(2, 2), 4).unwrap();
        let c = stack_constraints(&Polytope::unconstrained(2), &Polytope::unconstrained(1), None, 4).unwrap();
        let qp = assemble_condensed_qp(&pm, &w, &c, &v(&[1.0, -1.0])).unwrap();
        let gram = &qp.h - &w.r_u;
        assert!(gram.symmetric_eigenvalues().iter().all(|e| *e >= -1e-12));
    }

    #[test]
    fn control_horizon_reduction() {
        let model = example_lti();
        let pm = build_prediction(&model, 5).unwrap();
        let w = build_weights(&Matrix::identity(2, 2), &one(), &Matrix::identity(2, 2), 5).unwrap();
        let x_set = Polytope::from_box(&[-10.0, -10.0], &[10.0, 10.0]).unwrap();
        let u_set = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let c = stack_constraints(&x_set, &u_set, None, 5).unwrap();
        let qp = assemble_condensed_qp(&pm, &w, &c, &v(&[10.0, 5.0])).unwrap();
        assert_eq!(reduce_control_horizon(&qp, 5, 5).unwrap(), qp);
        let red = reduce_control_horizon(&qp, 5, 2).unwrap();
        assert_eq!(red.dim(), 2);
        // input rows of the three fixed blocks become 0 <= 1 and disappear
        assert!(red.f.nrows() < qp.f.nrows());
        assert!(matches!(reduce_control_horizon(&qp, 5, 6), Err(MpcError::InvalidHorizon(_))));
        assert!(matches!(reduce_control_horizon(&qp, 5, 0), Err(MpcError::InvalidHorizon(_))));
    }

    #[test]
    fn reduced_problem_matches_brute_force() {
        // x⁺ = x + u, only the terminal state is weighted; N = 4, N_C = 2
        let model = scalar(1.0, 1.0);
        let n = 4;
        let pm = build_prediction(&model, n).unwrap();
        let w = build_weights(&Matrix::zeros(1, 1), &(one() * 0.1), &one(), n).unwrap();
        let x_set = Polytope::unconstrained(1);
        let u_set = Polytope::from_box(&[-0.4], &[0.4]).unwrap();
        let c = stack_constraints(&x_set, &u_set, None, n).unwrap();
        let x0 = 1.0;
        let qp = assemble_condensed_qp(&pm, &w, &c, &v(&[x0])).unwrap();
        let red = reduce_control_horizon(&qp, n, 2).unwrap();
        let sol = solve_qp(&red, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);

        let cost = |u0: f64, u1: f64| {
            let xn = x0 + u0 + u1;
            xn * xn + 0.1 * (u0 * u0 + u1 * u1)
        };
        let steps = 800;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=steps {
            for j in 0..=steps {
                let u0 = -0.4 + 0.8 * i as f64 / steps as f64;
                let u1 = -0.4 + 0.8 * j as f64 / steps as f64;
                let c = cost(u0, u1);
                if c < best.0 {
                    best = (c, u0, u1);
                }
            }
        }
        assert!((sol.z_star[0] - best.1).abs() < 2e-3);
        assert!((sol.z_star[1] - best.2).abs() < 2e-3);
        assert!((sol.objective - best.0).abs() < 1e-5);
    }
}
