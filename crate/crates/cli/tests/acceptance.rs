//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.

#[path = "../../core/tests/support/qp_oracle.rs"]
mod qp_oracle;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mpc_harness::demos::demo_config;
use mpc_harness::{run_experiment, RunOutput};
use mpc_core::condense::build_prediction;
use mpc_core::controller::{lmpc_step, run_closed_loop, Formulation, MpcConfig, Plant};
use mpc_core::feasibility::{is_state_feasible, lyapunov_monitor, persistent_feasibility_check};
use mpc_core::{
    solve_qp, Dynamics, LtiModel, Matrix, NonlinearModel, PendulumParams, Polytope, QpProblem, QpSettings, QpStatus,
    Vector,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn example_model() -> LtiModel {
    LtiModel::new(
        Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.4, 0.8]),
        Matrix::from_row_slice(2, 1, &[0.1, 0.01]),
    )
    .unwrap()
}

fn run_demo(name: &str) -> (RunOutput, Duration) {
    let cfg = demo_config(name).expect("bundled demo").expect("demo parses");
    let start = Instant::now();
    let out = run_experiment(&cfg, None).expect("demo runs");
    (out, start.elapsed())
}

fn within_box(out: &RunOutput, x_max: f64, x_tol: f64, u_lo: f64, u_hi: f64, u_tol: f64) -> bool {
    let t = &out.trajectory;
    t.states.iter().all(|x| x.amax() <= x_max + x_tol)
        && t.inputs.iter().all(|u| u.iter().all(|&ui| ui >= u_lo - u_tol && ui <= u_hi + u_tol))
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn lti_steady_state() -> Outcome {
    let model = example_model();
    let start = Instant::now();
    let ss = model.steady_state_input(&v(&[3.0, 2.0])).unwrap();
    let t = start.elapsed();
    let u = ss.input[0];
    outcome(
        (u - 0.59).abs() <= 0.005 && t < Duration::from_millis(1),
        format!("u_r = {u:.6} (target 0.59 ± 0.005), {}", ms(t)),
    )
}

fn pendulum_steady_state() -> Outcome {
    let model = NonlinearModel::pendulum(PendulumParams::default()).unwrap();
    let start = Instant::now();
    let ss = model.steady_state_input(&v(&[0.5, 0.0]), &v(&[0.0])).unwrap();
    let t = start.elapsed();
    let u = ss.input[0];
    outcome(
        (u - 4.69).abs() <= 0.01 && t < Duration::from_millis(10),
        format!("u_r = {u:.6} (target 4.69 ± 0.01), {}", ms(t)),
    )
}

fn lmpc_stabilize() -> Outcome {
    let (out, t) = run_demo("lmpc-stabilize");
    let x_end = out.trajectory.final_state().unwrap().amax();
    let bounds = within_box(&out, 10.0, 1e-6, -1.0, 1.0, 1e-8);
    let steps = out.trajectory.steps() == 50;
    outcome(
        bounds && steps && x_end <= 0.1 && t < Duration::from_secs(2),
        format!("constraints {bounds}, |x_50|_inf = {x_end:.3e}, {}", ms(t)),
    )
}

fn lmpc_track() -> Outcome {
    let (out, t) = run_demo("lmpc-track");
    let x_end = out.trajectory.final_state().unwrap();
    let err = (x_end - v(&[3.0, 2.0])).amax();
    let bounds = within_box(&out, 10.0, 1e-6, -1.0, 1.0, 1e-8);
    outcome(
        bounds && err <= 1e-2 && t < Duration::from_secs(2),
        format!(
            "constraints {bounds}, x_50 = [{:.4}, {:.4}], |x_50 - x_r|_inf = {err:.3e}, {}",
            x_end[0],
            x_end[1],
            ms(t)
        ),
    )
}

fn nmpc_stabilize() -> Outcome {
    let (out, t) = run_demo("nmpc-stabilize");
    let x_end = out.trajectory.final_state().unwrap().amax();
    let bounds = within_box(&out, 5.0, 1e-6, 0.0, 0.1, 1e-8);
    let steps = out.trajectory.steps() == 50;
    outcome(
        bounds && steps && x_end <= 0.1 && t < Duration::from_secs(30),
        format!("constraints {bounds}, |x_50|_inf = {x_end:.3e}, {}", ms(t)),
    )
}

fn nmpc_track() -> Outcome {
    let (out, t) = run_demo("nmpc-track");
    let traj = &out.trajectory;
    let x_end = traj.final_state().unwrap();
    let err = (x_end - v(&[0.5, 0.0])).amax();
    let u_end = traj.inputs.last().unwrap()[0];
    let bounds = within_box(&out, 5.0, 1e-6, 0.0, 5.0, 1e-8);
    outcome(
        bounds && err <= 1e-2 && (u_end - 4.69).abs() <= 0.05 && t < Duration::from_secs(30),
        format!(
            "constraints {bounds}, |x_N_T - x_r|_inf = {err:.3e}, final u = {u_end:.4}, {}",
            ms(t)
        ),
    )
}

fn qp_oracle_suite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let settings = QpSettings::default();
    let mut solve_time = Duration::ZERO;
    let (mut worst_obj, mut worst_feas) = (0.0f64, 0.0f64);
    let mut all_optimal = true;
    for _ in 0..200 {
        let qp = qp_oracle::random_qp(&mut rng, 8, 10, 3);
        let start = Instant::now();
        let sol = solve_qp(&qp, None, &settings).unwrap();
        solve_time += start.elapsed();
        all_optimal &= sol.status == QpStatus::Optimal;
        let (_, best) = qp_oracle::solve_by_enumeration(&qp).expect("feasible by construction");
        worst_obj = worst_obj.max((sol.objective - best).abs());
        if qp.f.nrows() > 0 {
            worst_feas = worst_feas.max((&qp.f * &sol.z_star - &qp.g).max());
        }
        if qp.f_eq.nrows() > 0 {
            worst_feas = worst_feas.max((&qp.f_eq * &sol.z_star - &qp.g_eq).amax());
        }
    }
    outcome(
        all_optimal && worst_obj <= 1e-5 && worst_feas <= 1e-5 && solve_time < Duration::from_secs(10),
        format!(
            "max |J - J_oracle| = {worst_obj:.2e}, max violation = {worst_feas:.2e}, solver time {}",
            ms(solve_time)
        ),
    )
}

/// Largest per-step difference between sparse and condensed `u_k` along the
/// sparse closed loop.
fn formulation_gap(model: &LtiModel, cfg: &MpcConfig, x_0: &Vector) -> f64 {
    let mut sparse = cfg.clone();
    sparse.formulation = Formulation::Sparse;
    let mut condensed = cfg.clone();
    condensed.formulation = Formulation::Condensed;
    let traj = run_closed_loop(&Plant::Lti(model.clone()), &sparse, x_0).expect("closed loop runs");
    traj.states
        .iter()
        .zip(&traj.inputs)
        .map(|(x, u)| {
            let c = lmpc_step(model, &condensed, x, None).expect("condensed step");
            (&c.u_k - u).amax()
        })
        .fold(0.0, f64::max)
}

fn sparse_condensed_equivalence() -> Outcome {
    let demo = demo_config("lmpc-stabilize").unwrap().unwrap().experiment().unwrap();
    let Plant::Lti(model) = &demo.plant else { unreachable!() };
    let demo_gap = formulation_gap(model, &demo.mpc, &demo.x_0);

    let mut rng = StdRng::seed_from_u64(11);
    let mut random_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=2);
        let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-0.7..0.7));
        let b = Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let model = LtiModel::new(a, b).unwrap();
        let x_max = vec![5.0; n];
        let u_max = vec![rng.gen_range(0.2..1.0); m];
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let horizon = rng.gen_range(2..=6);
        let mut cfg = MpcConfig::new(
            horizon,
            10,
            Matrix::identity(n, n),
            Matrix::identity(m, m) * rng.gen_range(0.1..2.0),
            Polytope::from_box(&neg(&x_max), &x_max).unwrap(),
            Polytope::from_box(&neg(&u_max), &u_max).unwrap(),
        );
        cfg.control_horizon = rng.gen_range(1..=horizon);
        let x_0 = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        random_gap = random_gap.max(formulation_gap(&model, &cfg, &x_0));
    }
    outcome(
        demo_gap <= 1e-5 && random_gap <= 1e-5,
        format!("max |u_sparse - u_condensed|: demo {demo_gap:.2e}, 50 random systems {random_gap:.2e}"),
    )
}

fn optimality_trend() -> Outcome {
    let model = example_model();
    let x_0 = v(&[10.0, 5.0]);
    let time_horizon = 30;
    let mut costs = Vec::new();
    for horizon in [2, 5, 10, 30] {
        let mut cfg = MpcConfig::new(
            horizon,
            time_horizon,
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Polytope::unconstrained(2),
            Polytope::unconstrained(1),
        );
        cfg.shrink_horizon = true;
        let traj = run_closed_loop(&Plant::Lti(model.clone()), &cfg, &x_0).unwrap();
        costs.push(traj.closed_loop_cost(&cfg));
    }
    // full-horizon constrained LQR as one condensed QP
    let pm = build_prediction(&model, time_horizon).unwrap();
    let q_x = Matrix::identity(2 * (time_horizon + 1), 2 * (time_horizon + 1));
    let h = pm.b_u.transpose() * &q_x * &pm.b_u + Matrix::identity(time_horizon, time_horizon);
    let free = &pm.a_x * &x_0;
    let q = pm.b_u.transpose() * &q_x * &free * 2.0;
    let qp = QpProblem::new(h, q).with_constant(free.dot(&(&q_x * &free)));
    let clqr = solve_qp(&qp, None, &QpSettings::default()).unwrap().objective;

    let monotone = costs.windows(2).all(|w| w[1] <= w[0] + 1e-8);
    let gap = (costs[3] - clqr).abs() / clqr.abs();
    outcome(
        monotone && gap <= 1e-6,
        format!(
            "J(N=2,5,10,30) = [{:.6}, {:.6}, {:.6}, {:.6}], CLQR = {clqr:.6}, relative gap {gap:.2e}",
            costs[0], costs[1], costs[2], costs[3]
        ),
    )
}

fn lyapunov_decrease() -> Outcome {
    let (out, _) = run_demo("lmpc-stabilize");
    let report = lyapunov_monitor(&out.trajectory);
    outcome(
        report.violations.is_empty() && report.deltas.len() + 1 == report.values.len(),
        format!("{} deltas, violations at {:?}", report.deltas.len(), report.violations),
    )
}

fn prediction_property() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let horizon = rng.gen_range(1..=8);
        let model = LtiModel::new(
            Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.2..1.2)),
            Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let x = Vector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        let u = Vector::from_fn(m * horizon, |_, _| rng.gen_range(-2.0..2.0));
        let predicted = build_prediction(&model, horizon).unwrap().predict(&x, &u).unwrap();
        let mut state = x.clone();
        for i in 0..=horizon {
            let err = (predicted.rows(i * n, n) - &state).amax() / (1.0 + state.amax());
            worst = worst.max(err);
            if i < horizon {
                state = model.step(&state, &u.rows(i * m, m).into_owned()).unwrap();
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-10 && t < Duration::from_secs(1),
        format!("max scaled error {worst:.2e} over 500 cases, {}", ms(t)),
    )
}

fn feasibility_diagnostics() -> Outcome {
    let scalar = |a: f64, b: f64, u_max: f64| {
        let model = LtiModel::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, b)).unwrap();
        let cfg = MpcConfig::new(
            1,
            1,
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Polytope::from_box(&[-10.0], &[10.0]).unwrap(),
            Polytope::from_box(&[-u_max], &[u_max]).unwrap(),
        );
        (model, cfg)
    };
    let demo = demo_config("lmpc-stabilize").unwrap().unwrap().experiment().unwrap();
    let Plant::Lti(model) = &demo.plant else { unreachable!() };
    let interior = is_state_feasible(model, &demo.mpc, &v(&[0.0, 0.0])).unwrap().feasible;

    let (m2, c2) = scalar(2.0, 0.0, 100.0);
    let uncontrollable = !is_state_feasible(&m2, &c2, &v(&[6.0])).unwrap().feasible;

    let (m3, c3) = scalar(2.0, 1.0, 100.0);
    let r = is_state_feasible(&m3, &c3, &v(&[6.0])).unwrap();
    let w = r.witness.as_ref().map(|w| w[0]);
    let controllable = r.feasible && w.is_some_and(|u| (-22.0 - 1e-6..=-2.0 + 1e-6).contains(&u));

    let (out, _) = run_demo("lmpc-stabilize");
    let persistence = persistent_feasibility_check(&out.trajectory, model, &demo.mpc).unwrap();
    let persistent = persistence.all_feasible() && persistence.reports.len() == 51;
    outcome(
        interior && uncontrollable && controllable && persistent,
        format!(
            "interior {interior}, uncontrollable-infeasible {uncontrollable}, witness {w:?} {controllable}, \
             {} of {} demo states feasible",
            persistence.reports.len() - persistence.infeasible.len(),
            persistence.reports.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("steady-state input, LTI", lti_steady_state),
        ("steady-state input, pendulum", pendulum_steady_state),
        ("LMPC stabilization demo", lmpc_stabilize),
        ("LMPC tracking demo", lmpc_track),
        ("NMPC stabilization demo", nmpc_stabilize),
        ("NMPC tracking demo", nmpc_track),
        ("QP oracle suite", qp_oracle_suite),
        ("sparse/condensed equivalence", sparse_condensed_equivalence),
        ("optimality trend and CLQR limit", optimality_trend),
        ("Lyapunov decrease", lyapunov_decrease),
        ("prediction matrices vs rollout", prediction_property),
        ("feasibility diagnostics", feasibility_diagnostics),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {name}: {}", i + 1, r.detail);
        if !r.pass {
            failed.push(i + 1);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed{}",
        criteria.len() - failed.len(),
        criteria.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
