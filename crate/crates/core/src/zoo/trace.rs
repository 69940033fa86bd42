use std::fmt::Write as _;

use serde::Serialize;

use crate::canon::Segment;
use crate::solver::Status;

/// One solve of a simulation or back-test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStep {
    pub step: usize,
    /// Full flattened parameter vector used for this solve.
    pub theta: Vec<f64>,
    /// Parameters written before this solve (all of them at step 0).
    pub updated: Vec<String>,
    /// Retrieved user variables, stacked in declaration order.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub wall_ns: u64,
    pub refactorized: bool,
    pub status: Status,
    pub feasibility_violation: f64,
    pub touched: Vec<Segment>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimTrace {
    pub steps: Vec<SimStep>,
    /// Factorizations performed by the workspace, setup included.
    pub factorizations: usize,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn refactorizations(&self) -> usize {
        self.steps.iter().filter(|s| s.refactorized).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,objective,iterations,wall_ns,refactorized,feasibility_violation\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{:.17e},{},{},{},{:.6e}",
                s.step, s.objective, s.iterations, s.wall_ns, s.refactorized as u8, s.feasibility_violation
            );
        }
        out
    }
}
