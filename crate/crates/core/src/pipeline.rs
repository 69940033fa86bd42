//! Parameter values in, user-variable values out: canonical map
//! evaluation, solver updates restricted to the touched segments, warm
//! started solve and retrieval.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ast::{ModelError, Problem, Values};
use crate::canon::{
    canonicalize, partial_update, AffineMap, CanonError, CanonQP, DependencyTable, RetrievalMap, Segment,
};
use crate::solver::{Settings, Solution, SolverError, Workspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub solution: Solution,
    /// Retrieved user variables, stacked in declaration order.
    pub x: Vec<f64>,
    /// Canonical segments refreshed before this solve.
    pub touched: BTreeSet<Segment>,
    pub refactorized: bool,
}

/// A canonicalized family with a live solver workspace. Parameters are
/// staged with [`CachedSolver::set_param`] and applied lazily by
/// [`CachedSolver::solve`].
#[derive(Debug, Clone)]
pub struct CachedSolver {
    pub canon: CanonQP,
    pub cmap: AffineMap,
    pub rmap: RetrievalMap,
    pub deps: DependencyTable,
    theta: Vec<f64>,
    theta_tilde: Vec<f64>,
    dirty: Vec<bool>,
    ws: Workspace,
}

impl CachedSolver {
    pub fn new(problem: &Problem, values: &Values, settings: Settings) -> Result<CachedSolver, PipelineError> {
        let (canon, cmap, rmap, deps) = canonicalize(problem)?;
        let theta = cmap.flatten(values)?;
        CachedSolver::from_parts(canon, cmap, rmap, deps, theta, settings)
    }

    pub fn from_parts(
        canon: CanonQP,
        cmap: AffineMap,
        rmap: RetrievalMap,
        deps: DependencyTable,
        theta: Vec<f64>,
        settings: Settings,
    ) -> Result<CachedSolver, PipelineError> {
        let theta_tilde = cmap.eval_params(&theta)?;
        let qp = canon.assemble(&theta_tilde)?;
        let ws = Workspace::setup(&qp.p, &qp.q, &qp.a, &qp.l, &qp.u, settings)?;
        let dirty = vec![false; cmap.names.len()];
        Ok(CachedSolver {
            canon,
            cmap,
            rmap,
            deps,
            theta,
            theta_tilde,
            dirty,
            ws,
        })
    }

    /// Stage a new value for a parameter.
    pub fn set_param(&mut self, name: &str, value: &DMatrix<f64>) -> Result<(), PipelineError> {
        let k = self
            .cmap
            .param_index(name)
            .ok_or_else(|| PipelineError::UnknownParameter(name.to_string()))?;
        let b = self.cmap.layout.block(k);
        if value.nrows() != b.rows || value.ncols() != b.cols {
            return Err(CanonError::LengthMismatch {
                what: "parameter value",
                expected: b.rows * b.cols,
                found: value.len(),
            }
            .into());
        }
        let stored = self.cmap.flatten_one(k, value)?;
        self.set_param_stored(k, &stored)
    }

    /// Stage the stored entries (layout order) of parameter `k`.
    pub fn set_param_stored(&mut self, k: usize, stored: &[f64]) -> Result<(), PipelineError> {
        let b = self.cmap.layout.blocks().get(k).ok_or(CanonError::UnknownParameter(k))?;
        if stored.len() != b.len() {
            return Err(CanonError::LengthMismatch {
                what: "parameter value",
                expected: b.len(),
                found: stored.len(),
            }
            .into());
        }
        self.theta[b.offset..b.offset + b.len()].copy_from_slice(stored);
        self.dirty[k] = true;
        Ok(())
    }

    /// Refresh the rows of theta_tilde depending on staged parameters,
    /// push the touched segments into the solver and solve.
    pub fn solve(&mut self) -> Result<StepResult, PipelineError> {
        let changed: Vec<usize> = (0..self.dirty.len()).filter(|&k| self.dirty[k]).collect();
        let touched = partial_update(&self.cmap, &self.deps, &self.theta, &changed, &mut self.theta_tilde)?;
        self.dirty.fill(false);
        let s = &self.canon.segments;
        let tt = &self.theta_tilde;
        let seg = |g: Segment| touched.contains(&g).then(|| &tt[s.range(g)]);
        let before = self.ws.factorizations();
        if touched.contains(&Segment::Q) || touched.contains(&Segment::L) || touched.contains(&Segment::U) {
            self.ws.update_vectors(seg(Segment::Q), seg(Segment::L), seg(Segment::U))?;
        }
        if touched.contains(&Segment::P) || touched.contains(&Segment::A) {
            self.ws.update_matrix_values(seg(Segment::P), seg(Segment::A))?;
        }
        let refactorized = self.ws.factorizations() > before;
        let solution = self.ws.solve();
        let x = self.rmap.retrieve(&solution.x_tilde)?;
        Ok(StepResult {
            solution,
            x,
            touched,
            refactorized,
        })
    }

    pub fn factorizations(&self) -> usize {
        self.ws.factorizations()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_tilde(&self) -> &[f64] {
        &self.theta_tilde
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn workspace_mut(&mut self) -> &mut Workspace {
        &mut self.ws
    }

    /// Retrieved values per user variable for the latest iterate.
    pub fn values(&self) -> Result<Values, PipelineError> {
        Ok(self.rmap.retrieve_values(self.ws.x())?)
    }
}

/// Everything from scratch: canonicalize, evaluate the map, set up a fresh
/// workspace, cold solve and retrieve.
pub fn solve_full(problem: &Problem, values: &Values, settings: Settings) -> Result<StepResult, PipelineError> {
    let mut cs = CachedSolver::new(problem, values, settings)?;
    cs.solve()
}
