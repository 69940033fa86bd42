//! ADMM solver for `minimize 1/2 x'Px + q'x  s.t.  l <= Ax <= u` with a
//! cached LDL' factorization of the KKT matrix.

mod admm;
mod kkt;
mod ldl;
mod order;

pub use admm::Workspace;
pub use kkt::Kkt;
pub use ldl::{etree, Ldl};
pub use order::{invert, min_degree};

use serde::Serialize;
use thiserror::Error;

use crate::sparse::SparseError;

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INF_BOUND: f64 = 1e30;
/// Step size for rows with both bounds infinite.
pub const RHO_MIN: f64 = 1e-6;
/// Step size multiplier for equality rows.
pub const RHO_EQ_SCALE: f64 = 1e3;
/// Rows with `u - l` below this are equality rows.
pub const RHO_EQ_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: lower bound {l} exceeds upper bound {u}")]
    BoundCrossing { row: usize, l: f64, u: f64 },
    #[error("P must be given as an upper triangle")]
    NotUpperTriangular,
    #[error("zero or non-finite pivot at KKT column {0}")]
    ZeroPivot(usize),
    #[error("KKT inertia check failed: {positive} positive pivots, expected {expected} (P not positive semidefinite?)")]
    FactorizationBreakdown { positive: usize, expected: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub check_interval: usize,
    pub warm_start: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_prim_inf: 1e-4,
            eps_dual_inf: 1e-4,
            max_iter: 20000,
            check_interval: 25,
            warm_start: true,
        }
    }
}

impl Settings {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_abs = eps;
        self.eps_rel = eps;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidSettings(m.to_string()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad("alpha must lie in (0, 2)");
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0 && self.eps_prim_inf > 0.0 && self.eps_dual_inf > 0.0)
        {
            return bad("tolerances must be positive");
        }
        if self.max_iter == 0 || self.check_interval == 0 {
            return bad("max_iter and check_interval must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Solved,
    MaxIterReached,
    PrimalInfeasible,
    DualInfeasible,
    Unsolved,
}

impl Status {
    /// Integer code shared with the generated C API.
    pub fn code(self) -> i32 {
        match self {
            Status::Solved => 0,
            Status::MaxIterReached => 1,
            Status::PrimalInfeasible => 2,
            Status::DualInfeasible => 3,
            Status::Unsolved => -1,
        }
    }

    pub fn from_code(c: i32) -> Status {
        match c {
            0 => Status::Solved,
            1 => Status::MaxIterReached,
            2 => Status::PrimalInfeasible,
            3 => Status::DualInfeasible,
            _ => Status::Unsolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub x_tilde: Vec<f64>,
    pub y: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    /// `1/2 x'Px + q'x` at `x_tilde`.
    pub objective: f64,
}
