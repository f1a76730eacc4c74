//! Linear and nonlinear model predictive control.

pub mod condense;
pub mod controller;
pub mod error;
pub mod feasibility;
pub mod model;
pub mod nlp;
pub mod numerics;
pub mod qp;

pub use error::{MpcError, Result};
pub use model::{Dynamics, LtiModel, NonlinearModel, PendulumParams, Polytope, SteadyState};
pub use numerics::{Matrix, Vector};
pub use qp::{kkt_residuals, solve_qp, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};
