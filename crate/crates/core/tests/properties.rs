mod support;

use mpc_core::condense::{assemble_condensed_qp, assemble_sparse_qp, build_prediction, build_weights, stack_constraints};
use mpc_core::numerics::{finite_diff_jacobian, solve_linear};
use mpc_core::{solve_qp, Dynamics, LtiModel, Matrix, NonlinearModel, PendulumParams, Polytope, QpSettings, QpStatus, Vector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use support::qp_oracle::{random_qp, solve_by_enumeration};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.5f64..1.5, rows * cols).prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

fn vector(len: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-3.0f64..3.0, len).prop_map(Vector::from_vec)
}

fn lti_case() -> impl Strategy<Value = (LtiModel, usize, Vector, Vector)> {
    (1usize..4, 1usize..3, 1usize..7).prop_flat_map(|(n, m, horizon)| {
        (matrix(n, n), matrix(n, m), vector(n), vector(m * horizon)).prop_map(move |(a, b, x, u)| {
            (LtiModel::new(a, b).unwrap(), horizon, x, u)
        })
    })
}

proptest! {
    #[test]
    fn prediction_matches_rollout((model, horizon, x, u) in lti_case()) {
        let pm = build_prediction(&model, horizon).unwrap();
        let predicted = pm.predict(&x, &u).unwrap();
        let (n, m) = (model.state_dim(), model.input_dim());
        let mut state = x.clone();
        for i in 0..=horizon {
            let scale = 1.0 + state.amax();
            prop_assert!((predicted.rows(i * n, n) - &state).amax() <= 1e-10 * scale);
            if i < horizon {
                state = model.step(&state, &u.rows(i * m, m).into_owned()).unwrap();
            }
        }
    }

    #[test]
    fn condensed_cost_equals_sparse_cost((model, horizon, x, u) in lti_case()) {
        let (n, m) = (model.state_dim(), model.input_dim());
        let pm = build_prediction(&model, horizon).unwrap();
        let w = build_weights(&Matrix::identity(n, n), &(Matrix::identity(m, m) * 0.5), &(Matrix::identity(n, n) * 2.0), horizon).unwrap();
        let c = stack_constraints(&Polytope::unconstrained(n), &Polytope::unconstrained(m), None, horizon).unwrap();
        let sparse = assemble_sparse_qp(&pm, &w, &c, &x).unwrap();
        let condensed = assemble_condensed_qp(&pm, &w, &c, &x).unwrap();
        let states = pm.predict(&x, &u).unwrap();
        let z = Vector::from_iterator(states.len() + u.len(), states.iter().chain(u.iter()).copied());
        let js = sparse.objective(&z);
        let jc = condensed.objective(&u);
        prop_assert!((js - jc).abs() <= 1e-9 * js.abs().max(1.0), "{js} vs {jc}");
    }

    #[test]
    fn linear_solve_residual(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = Matrix::from_fn(n, n, |i, j| rand::Rng::gen_range(&mut rng, -1.0..1.0) + if i == j { 3.0 } else { 0.0 });
        let b = Vector::from_fn(n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let x = solve_linear(&m, &b).unwrap();
        prop_assert!((&m * &x - &b).amax() <= 1e-10 * (1.0 + b.amax()));
    }

    #[test]
    fn pendulum_jacobian_matches_finite_differences(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, u in -5.0f64..5.0) {
        let model = NonlinearModel::pendulum(PendulumParams::default()).unwrap();
        let (x, uv) = (Vector::from_vec(vec![x1, x2]), Vector::from_vec(vec![u]));
        let (a, b) = model.jacobians(&x, &uv).unwrap();
        let z = Vector::from_vec(vec![x1, x2, u]);
        let fd = finite_diff_jacobian(|z: &Vector| model.step(&z.rows(0, 2).into_owned(), &z.rows(2, 1).into_owned()), &z).unwrap();
        prop_assert!((fd.columns(0, 2) - a).amax() < 1e-6);
        prop_assert!((fd.columns(2, 1) - b).amax() < 1e-6);
    }

    #[test]
    fn polytope_containment_monotone_in_tolerance(v in vector(3), lo in 0.0f64..1e-3, extra in 0.0f64..1e-3) {
        let p = Polytope::from_box(&[-1.0, -2.0, -0.5], &[1.0, 2.0, 0.5]).unwrap();
        if p.contains(&v, lo).unwrap() {
            prop_assert!(p.contains(&v, lo + extra).unwrap());
        }
    }

    #[test]
    fn qp_matches_enumeration_oracle(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let qp = random_qp(&mut rng, 6, 8, 2);
        let sol = solve_qp(&qp, None, &QpSettings::default()).unwrap();
        let (_, best) = solve_by_enumeration(&qp).expect("feasible by construction");
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!((sol.objective - best).abs() <= 1e-5, "{} vs {}", sol.objective, best);
        if qp.f.nrows() > 0 {
            prop_assert!((&qp.f * &sol.z_star - &qp.g).max() <= 1e-5);
        }
        if qp.f_eq.nrows() > 0 {
            prop_assert!((&qp.f_eq * &sol.z_star - &qp.g_eq).amax() <= 1e-5);
        }
    }
}
