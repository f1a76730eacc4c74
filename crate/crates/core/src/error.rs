use thiserror::Error;

use crate::numerics::Vector;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MpcError {
    #[error("incompatible shapes: {0}")]
    Shape(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("no steady-state input exists: {0}")]
    NoSteadyState(String),
    #[error("steady state not found, final residual {residual:e}")]
    SteadyStateNotFound { residual: f64 },
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reference is infeasible: {0}")]
    ReferenceInfeasible(String),
    #[error("optimization problem is not convex: {0}")]
    NonConvex(String),
    #[error("function evaluation failed: {0}")]
    Evaluation(String),
    #[error("infeasible MPC problem at state {state:?}")]
    InfeasibleStep { state: Vec<f64> },
    #[error("solver failed at state {state:?}: {status}")]
    SolverFailure { state: Vec<f64>, status: String },
}

impl MpcError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MpcError::Shape(msg.into())
    }

    pub(crate) fn infeasible_at(x: &Vector) -> Self {
        MpcError::InfeasibleStep {
            state: x.iter().copied().collect(),
        }
    }
}

pub type Result<T, E = MpcError> = std::result::Result<T, E>;
