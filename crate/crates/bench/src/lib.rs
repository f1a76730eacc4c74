//! Benchmark fixtures: the LTI and pendulum examples with their constraint sets.

use mpc_core::controller::MpcConfig;
use mpc_core::{LtiModel, Matrix, NonlinearModel, PendulumParams, Polytope, Vector};

pub fn lti_example() -> (LtiModel, MpcConfig, Vector) {
    let model = LtiModel::new(
        Matrix::from_row_slice(2, 2, &[0.9, 0.2, -0.4, 0.8]),
        Matrix::from_row_slice(2, 1, &[0.1, 0.01]),
    )
    .expect("valid model");
    let cfg = MpcConfig::new(
        5,
        50,
        Matrix::identity(2, 2),
        Matrix::identity(1, 1),
        Polytope::from_box(&[-10.0, -10.0], &[10.0, 10.0]).expect("valid box"),
        Polytope::from_box(&[-1.0], &[1.0]).expect("valid box"),
    );
    (model, cfg, Vector::from_vec(vec![10.0, 5.0]))
}

pub fn pendulum_example() -> (NonlinearModel, MpcConfig, Vector) {
    let model = NonlinearModel::pendulum(PendulumParams::default()).expect("valid params");
    let cfg = MpcConfig::new(
        5,
        50,
        Matrix::identity(2, 2),
        Matrix::identity(1, 1),
        Polytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]).expect("valid box"),
        Polytope::from_box(&[0.0], &[0.1]).expect("valid box"),
    );
    (model, cfg, Vector::from_vec(vec![2.0, 1.0]))
}
