//! Problem families used in the experiments: nonnegative least squares,
//! quadcopter-style MPC and factor-model portfolio optimization, with
//! closed-loop simulation and back-test drivers.

mod dare;
mod market;
mod mpc;
mod nnls;
mod portfolio;
mod trace;

pub use dare::{dare_rhs, solve_dare, sqrt_upper, DARE_MAX_ITER, DARE_TOL};
pub use market::Market;
pub use mpc::{build_mpc, build_mpc_non_dpp, random_state, simulate_mpc, MpcFamily, MpcModel};
pub use nnls::{build_nnls, NnlsFamily};
pub use portfolio::{
    backtest, build_portfolio, build_portfolio_non_dpp, PortfolioCosts, PortfolioFamily,
};
pub use trace::{SimStep, SimTrace};

use thiserror::Error;

use crate::ast::ModelError;
use crate::pipeline::PipelineError;
use crate::solver::Status;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZooError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("Riccati iteration did not converge after {iterations} iterations (last step {step:e})")]
    DareNoConvergence { iterations: usize, step: f64 },
    #[error("solver returned {status:?} at step {step}")]
    SolveFailed { step: usize, status: Status },
    #[error("step {step}: {source}")]
    Pipeline {
        step: usize,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Setup(#[from] PipelineError),
}

/// Dense matrix with an explicit diagonal sparsity pattern.
pub(crate) fn diag_pattern(n: usize) -> Option<Vec<(usize, usize)>> {
    Some((0..n).map(|i| (i, i)).collect())
}
