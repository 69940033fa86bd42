use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use nalgebra::DMatrix;

use super::expr::{is_c_identifier, Expr, Op, Parameter, Shape, Sign, Variable};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `expr == 0`, expr affine.
    EqZero,
    /// `expr <= 0`, expr convex.
    NonPos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub expr: Expr,
}

impl Constraint {
    pub fn eq_zero(expr: Expr) -> Self {
        Constraint {
            kind: ConstraintKind::EqZero,
            expr,
        }
    }

    pub fn nonpos(expr: Expr) -> Self {
        Constraint {
            kind: ConstraintKind::NonPos,
            expr,
        }
    }

    /// `expr >= 0`, stored as `-expr <= 0`.
    pub fn nonneg(expr: Expr) -> Self {
        Constraint::nonpos(expr.neg())
    }

    pub fn eq(lhs: &Expr, rhs: &Expr) -> Result<Self, ModelError> {
        Ok(Constraint::eq_zero(lhs.minus(rhs)?))
    }

    pub fn le(lhs: &Expr, rhs: &Expr) -> Result<Self, ModelError> {
        Ok(Constraint::nonpos(lhs.minus(rhs)?))
    }

    pub fn ge(lhs: &Expr, rhs: &Expr) -> Result<Self, ModelError> {
        Ok(Constraint::nonneg(lhs.minus(rhs)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A validated parametrized problem family.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub sense: Sense,
    pub objective: Expr,
    pub constraints: Vec<Constraint>,
    pub variables: Vec<Arc<Variable>>,
    pub parameters: Vec<Arc<Parameter>>,
}

/// Values of variables or parameters keyed by name, as dense matrices.
pub type Values = HashMap<String, DMatrix<f64>>;

impl Problem {
    /// Validate declarations, references, shapes and DCP rules.
    pub fn new(
        name: impl Into<String>,
        sense: Sense,
        objective: Expr,
        constraints: Vec<Constraint>,
        variables: Vec<Arc<Variable>>,
        parameters: Vec<Arc<Parameter>>,
    ) -> Result<Problem, ModelError> {
        let p = Problem {
            name: name.into(),
            sense,
            objective,
            constraints,
            variables,
            parameters,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        let mut var_ids = HashSet::new();
        let mut param_ids = HashSet::new();
        for v in &self.variables {
            check_name(&v.name, &mut names)?;
            if !var_ids.insert(v.id) {
                return Err(ModelError::DuplicateId(v.id));
            }
        }
        for p in &self.parameters {
            check_name(&p.name, &mut names)?;
            if !param_ids.insert(p.id) {
                return Err(ModelError::DuplicateId(p.id));
            }
            if let Some(s) = &p.sparsity {
                let mut seen = HashSet::new();
                for &(r, c) in s {
                    if r >= p.shape.rows || c >= p.shape.cols || !seen.insert((r, c)) {
                        return Err(ModelError::BadSparsity {
                            name: p.name.clone(),
                            row: r,
                            col: c,
                        });
                    }
                }
            }
        }
        let check_refs = |e: &Expr| -> Result<(), ModelError> {
            let mut err = None;
            e.walk(&mut |n| match &n.op {
                Op::Var(v) if !self.variables.iter().any(|d| **d == **v) => {
                    err.get_or_insert(ModelError::Undeclared(v.name.clone()));
                }
                Op::Param(p) if !self.parameters.iter().any(|d| **d == **p) => {
                    err.get_or_insert(ModelError::Undeclared(p.name.clone()));
                }
                _ => {}
            });
            err.map_or(Ok(()), Err)
        };
        check_refs(&self.objective)?;
        for c in &self.constraints {
            check_refs(&c.expr)?;
        }

        if !self.objective.shape.is_scalar() {
            return Err(ModelError::NonScalarObjective(self.objective.shape));
        }
        let curv = self.objective.curvature;
        let ok = match self.sense {
            Sense::Minimize => curv.is_convex(),
            Sense::Maximize => curv.is_concave(),
        };
        if !ok {
            return Err(ModelError::NotDcp(format!(
                "objective of a {} problem is {curv}",
                match self.sense {
                    Sense::Minimize => "minimization",
                    Sense::Maximize => "maximization",
                }
            )));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let curv = c.expr.curvature;
            let ok = match c.kind {
                ConstraintKind::EqZero => curv.is_affine(),
                ConstraintKind::NonPos => curv.is_convex(),
            };
            if !ok {
                return Err(ModelError::NotDcp(format!(
                    "constraint {i} ({:?}) has {curv} expression",
                    c.kind
                )));
            }
        }
        Ok(())
    }

    /// Objective of the equivalent minimization problem.
    pub fn minimization_objective(&self) -> Expr {
        match self.sense {
            Sense::Minimize => self.objective.clone(),
            Sense::Maximize => self.objective.neg(),
        }
    }

    pub fn variable(&self, name: &str) -> Option<&Arc<Variable>> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn parameter(&self, name: &str) -> Option<&Arc<Parameter>> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Total number of scalar variable entries.
    pub fn variable_count(&self) -> usize {
        self.variables.iter().map(|v| v.shape.size()).sum()
    }

    /// Objective value as stated (not negated for maximization).
    pub fn objective_value(&self, vars: &Values, params: &Values) -> Result<f64, ModelError> {
        Ok(evaluate(&self.objective, vars, params)?[(0, 0)])
    }

    /// Largest constraint violation: `|expr|` for equalities and
    /// `max(expr, 0)` for inequalities.
    pub fn max_violation(&self, vars: &Values, params: &Values) -> Result<f64, ModelError> {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let v = evaluate(&c.expr, vars, params)?;
            for &x in v.iter() {
                let viol = match c.kind {
                    ConstraintKind::EqZero => x.abs(),
                    ConstraintKind::NonPos => x.max(0.0),
                };
                worst = worst.max(viol);
            }
        }
        Ok(worst)
    }
}

fn check_name(name: &str, seen: &mut HashSet<String>) -> Result<(), ModelError> {
    if !is_c_identifier(name) {
        return Err(ModelError::BadName(name.to_string()));
    }
    if !seen.insert(name.to_string()) {
        return Err(ModelError::DuplicateName(name.to_string()));
    }
    Ok(())
}

/// Numerically evaluate an expression.
pub fn evaluate(e: &Expr, vars: &Values, params: &Values) -> Result<DMatrix<f64>, ModelError> {
    let lookup = |map: &Values, name: &str, shape: Shape| -> Result<DMatrix<f64>, ModelError> {
        let m = map.get(name).ok_or_else(|| ModelError::MissingValue(name.to_string()))?;
        if m.nrows() != shape.rows || m.ncols() != shape.cols {
            return Err(ModelError::ValueShape {
                name: name.to_string(),
                expected: shape,
                found: Shape {
                    rows: m.nrows(),
                    cols: m.ncols(),
                },
            });
        }
        Ok(m.clone())
    };
    let args = e
        .args
        .iter()
        .map(|a| evaluate(a, vars, params))
        .collect::<Result<Vec<_>, _>>()?;
    let broadcast = |m: &DMatrix<f64>, shape: Shape| -> DMatrix<f64> {
        if m.nrows() == shape.rows && m.ncols() == shape.cols {
            m.clone()
        } else {
            DMatrix::from_element(shape.rows, shape.cols, m[(0, 0)])
        }
    };
    Ok(match &e.op {
        Op::Const(m) => m.clone(),
        Op::Var(v) => lookup(vars, &v.name, v.shape)?,
        Op::Param(p) => lookup(params, &p.name, p.shape)?,
        Op::Add => args
            .iter()
            .fold(DMatrix::zeros(e.shape.rows, e.shape.cols), |acc, a| acc + broadcast(a, e.shape)),
        Op::Neg => -&args[0],
        Op::MulElemwise => broadcast(&args[0], e.shape).component_mul(&broadcast(&args[1], e.shape)),
        Op::MatMul => &args[0] * &args[1],
        Op::Index { rows, cols } => args[0]
            .view((rows.0, cols.0), (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1))
            .into_owned(),
        Op::Transpose => args[0].transpose(),
        Op::Sum => DMatrix::from_element(1, 1, args[0].sum()),
        Op::Hstack => {
            let mut out = DMatrix::zeros(e.shape.rows, e.shape.cols);
            let mut c = 0;
            for a in &args {
                out.view_mut((0, c), (a.nrows(), a.ncols())).copy_from(a);
                c += a.ncols();
            }
            out
        }
        Op::Vstack => {
            let mut out = DMatrix::zeros(e.shape.rows, e.shape.cols);
            let mut r = 0;
            for a in &args {
                out.view_mut((r, 0), (a.nrows(), a.ncols())).copy_from(a);
                r += a.nrows();
            }
            out
        }
        Op::SumSquares => DMatrix::from_element(1, 1, args[0].iter().map(|v| v * v).sum()),
        Op::Norm1 => DMatrix::from_element(1, 1, args[0].iter().map(|v| v.abs()).sum()),
        Op::Abs => args[0].map(f64::abs),
        Op::PosPart => args[0].map(|v| v.max(0.0)),
        Op::NegPart => args[0].map(|v| (-v).max(0.0)),
    })
}

/// Declares variables and parameters with fresh ids and assembles a
/// [`Problem`].
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    name: String,
    variables: Vec<Arc<Variable>>,
    parameters: Vec<Arc<Parameter>>,
    constraints: Vec<Constraint>,
    objective: Option<(Sense, Expr)>,
}

impl ProblemBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        ProblemBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn variable(&mut self, name: &str, rows: usize, cols: usize) -> Result<Expr, ModelError> {
        let v = Arc::new(Variable {
            id: self.variables.len(),
            name: name.to_string(),
            shape: Shape::new(rows, cols)?,
        });
        self.variables.push(v.clone());
        Ok(Expr::var(&v))
    }

    pub fn parameter(&mut self, name: &str, rows: usize, cols: usize) -> Result<Expr, ModelError> {
        self.parameter_with(name, rows, cols, Sign::Unknown, None)
    }

    pub fn parameter_with(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        sign: Sign,
        sparsity: Option<Vec<(usize, usize)>>,
    ) -> Result<Expr, ModelError> {
        let p = Arc::new(Parameter {
            id: self.parameters.len(),
            name: name.to_string(),
            shape: Shape::new(rows, cols)?,
            sign,
            sparsity,
        });
        self.parameters.push(p.clone());
        Ok(Expr::param(&p))
    }

    pub fn minimize(&mut self, objective: Expr) -> &mut Self {
        self.objective = Some((Sense::Minimize, objective));
        self
    }

    pub fn maximize(&mut self, objective: Expr) -> &mut Self {
        self.objective = Some((Sense::Maximize, objective));
        self
    }

    pub fn constrain(&mut self, c: Constraint) -> &mut Self {
        self.constraints.push(c);
        self
    }

    pub fn build(self) -> Result<Problem, ModelError> {
        let (sense, objective) = self.objective.ok_or(ModelError::MissingObjective)?;
        Problem::new(
            self.name,
            sense,
            objective,
            self.constraints,
            self.variables,
            self.parameters,
        )
    }
}
