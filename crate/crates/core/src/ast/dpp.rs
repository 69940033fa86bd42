use serde::Serialize;

use super::expr::{Expr, Op};
use super::problem::Problem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DppViolation {
    /// Both operands of a product depend on parameters.
    ParameterProduct,
    /// A nonlinear atom is applied to a parameter-only argument, which makes
    /// its value a non-affine function of the parameters.
    ParameterInNonlinearAtom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppOffense {
    /// Location from the problem root, e.g. `constraints[3].args[1]`.
    pub path: String,
    pub violation: DppViolation,
    /// Rendered offending subexpression.
    pub node: String,
    /// Parameters appearing in the offending subexpression.
    pub parameters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    pub offenses: Vec<DppOffense>,
}

impl DppReport {
    pub fn is_compliant(&self) -> bool {
        self.offenses.is_empty()
    }
}

/// Check that the parameters enter the problem affinely, so that the map
/// from parameter values to canonical problem data is affine.
///
/// Rules: in a product node at most one operand may contain parameters, and
/// a nonlinear atom may not take an argument that contains parameters but
/// no variables. All offenses are reported.
pub fn check_dpp(p: &Problem) -> DppReport {
    let mut offenses = Vec::new();
    visit(&p.objective, "objective".to_string(), &mut offenses);
    for (i, c) in p.constraints.iter().enumerate() {
        visit(&c.expr, format!("constraints[{i}]"), &mut offenses);
    }
    DppReport { offenses }
}

fn visit(e: &Expr, path: String, out: &mut Vec<DppOffense>) {
    let violation = if e.op.is_product() && e.args.iter().all(|a| a.has_params) {
        Some(DppViolation::ParameterProduct)
    } else if e.op.is_nonlinear_atom() && e.args[0].has_params && !e.args[0].has_vars {
        Some(DppViolation::ParameterInNonlinearAtom)
    } else {
        None
    };
    if let Some(violation) = violation {
        out.push(DppOffense {
            path: path.clone(),
            violation,
            node: e.to_string(),
            parameters: e.parameter_names(),
        });
    }
    if matches!(e.op, Op::Const(_) | Op::Var(_) | Op::Param(_)) {
        return;
    }
    for (k, a) in e.args.iter().enumerate() {
        visit(a, format!("{path}.args[{k}]"), out);
    }
}
