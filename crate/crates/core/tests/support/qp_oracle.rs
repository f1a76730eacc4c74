//! Exhaustive active-set reference solver for small strictly convex QPs.

use mpc_core::{Matrix, QpProblem, Vector};
use rand::Rng;

/// Minimum of `zᵀHz + qᵀz + r` over `Fz ≤ g`, `F_eq z = g_eq`, found by
/// solving the KKT system for every subset of active inequalities and
/// keeping the best feasible candidate.
pub fn solve_by_enumeration(p: &QpProblem) -> Option<(Vector, f64)> {
    let d = p.h.nrows();
    let rows = p.f.nrows();
    let e = p.f_eq.nrows();
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1 << rows) {
        let active: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let k = e + active.len();
        if k > d {
            continue;
        }
        let mut kkt = Matrix::zeros(d + k, d + k);
        let mut rhs = Vector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&(&p.h * 2.0));
        rhs.rows_mut(0, d).copy_from(&(-&p.q));
        for (j, (row, b)) in (0..e)
            .map(|i| (p.f_eq.row(i).into_owned(), p.g_eq[i]))
            .chain(active.iter().map(|&i| (p.f.row(i).into_owned(), p.g[i])))
            .enumerate()
        {
            kkt.view_mut((d + j, 0), (1, d)).copy_from(&row);
            kkt.view_mut((0, d + j), (d, 1)).copy_from(&row.transpose());
            rhs[d + j] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let z = sol.rows(0, d).into_owned();
        if rows > 0 && (&p.f * &z - &p.g).max() > 1e-9 {
            continue;
        }
        if e > 0 && (&p.f_eq * &z - &p.g_eq).amax() > 1e-9 {
            continue;
        }
        let obj = p.objective(&z);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    }
    best
}

/// Random strictly convex QP with a guaranteed feasible point.
pub fn random_qp<R: Rng>(rng: &mut R, max_d: usize, max_p: usize, max_e: usize) -> QpProblem {
    let d = rng.gen_range(1..=max_d);
    let p = rng.gen_range(0..=max_p);
    let e = rng.gen_range(0..=max_e.min(d - 1));
    let m = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + Matrix::identity(d, d) * 0.1;
    let q = Vector::from_fn(d, |_, _| rng.gen_range(-5.0..5.0));
    let z0 = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let f = Matrix::from_fn(p, d, |_, _| rng.gen_range(-1.0..1.0));
    let g = &f * &z0 + Vector::from_fn(p, |_, _| rng.gen_range(0.0..1.0));
    let f_eq = Matrix::from_fn(e, d, |_, _| rng.gen_range(-1.0..1.0));
    let g_eq = &f_eq * &z0;
    QpProblem::new(h, q).with_inequalities(f, g).with_equalities(f_eq, g_eq)
}
