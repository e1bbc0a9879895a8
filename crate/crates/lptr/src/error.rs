//! Error type shared by the solver stack.

use thiserror::Error;

/// Errors surfaced by linear solves, PDE solves and the scalar prox search.
///
/// Contract violations (mismatched grids, invalid parameters) panic instead;
/// they are programmer errors, not runtime conditions.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear solver hit the {max_iter}-iteration cap: residual {achieved:.3e} > target {target:.3e}")]
    LinearSolve {
        max_iter: usize,
        achieved: f64,
        target: f64,
    },

    #[error("Newton iteration for the state equation hit the cap of {cap}: residual {residual:.3e}")]
    NewtonCap { cap: usize, residual: f64 },

    #[error(
        "scalar prox inner iteration cap: candidates {candidate_small:.6e} and {candidate_branch:.6e}"
    )]
    ScalarProxCap {
        candidate_small: f64,
        candidate_branch: f64,
    },

    #[error("Cauchy point search degenerated after {backtracks} backtracks (step length underflow)")]
    DegenerateStep { backtracks: usize },

    #[error("no feasible step: path stays outside the trust region for all t >= {probed_down_to:.1e}")]
    NoFeasibleStep { probed_down_to: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;
