use serde::Serialize;

use crate::canon::{AffineMap, CanonQP, DependencyTable, RetrievalMap};
use crate::pipeline::{CachedSolver, PipelineError};
use crate::solver::Settings;
use crate::zoo::SimTrace;

/// One replayed solve: parameter writes (parameter index, stored entries),
/// then the expected canonical vector, retrieved variables and status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureStep {
    pub updates: Vec<(usize, Vec<f64>)>,
    pub theta_tilde: Vec<f64>,
    pub x: Vec<f64>,
    pub status: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FixtureSet {
    pub steps: Vec<FixtureStep>,
}

impl FixtureSet {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Apply each batch of updates to `cs`, solve, and record the results.
    pub fn record(cs: &mut CachedSolver, batches: &[Vec<(usize, Vec<f64>)>]) -> Result<FixtureSet, PipelineError> {
        let mut steps = Vec::with_capacity(batches.len());
        for batch in batches {
            for (k, stored) in batch {
                cs.set_param_stored(*k, stored)?;
            }
            let res = cs.solve()?;
            steps.push(FixtureStep {
                updates: batch.clone(),
                theta_tilde: cs.theta_tilde().to_vec(),
                x: res.x,
                status: res.solution.status.code(),
            });
        }
        Ok(FixtureSet { steps })
    }

    /// Replay the parameter writes of a simulation trace on a fresh
    /// workspace set up from the trace's first parameter vector.
    pub fn from_trace(
        canon: &CanonQP,
        cmap: &AffineMap,
        rmap: &RetrievalMap,
        deps: &DependencyTable,
        settings: Settings,
        trace: &SimTrace,
    ) -> Result<FixtureSet, PipelineError> {
        let Some(first) = trace.steps.first() else {
            return Ok(FixtureSet::default());
        };
        let mut cs = CachedSolver::from_parts(
            canon.clone(),
            cmap.clone(),
            rmap.clone(),
            deps.clone(),
            first.theta.clone(),
            settings,
        )?;
        let mut batches = Vec::with_capacity(trace.len());
        for step in &trace.steps {
            let mut batch = Vec::new();
            for name in &step.updated {
                let k = cmap
                    .param_index(name)
                    .ok_or_else(|| PipelineError::UnknownParameter(name.clone()))?;
                let b = cmap.layout.block(k);
                batch.push((k, step.theta[b.offset..b.offset + b.len()].to_vec()));
            }
            batches.push(batch);
        }
        FixtureSet::record(&mut cs, &batches)
    }
}
