//! Expression trees for parametrized convex problems, the DCP and DPP
//! checks, and the JSON problem-file format.

mod dpp;
mod expr;
mod format;
mod problem;

pub use dpp::{check_dpp, DppOffense, DppReport, DppViolation};
pub use expr::{curvature, is_c_identifier, Curvature, Expr, ExprNode, Op, Parameter, Shape, Sign, Variable};
pub use format::{matrix_to_json, parse_matrix, parse_problem, parse_values, print_problem};
pub use problem::{evaluate, Constraint, ConstraintKind, Problem, ProblemBuilder, Sense, Values};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty shape {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("constant contains a non-finite value")]
    NonFiniteConstant,
    #[error("`{op}` expects {expected} argument(s), found {found}")]
    Arity {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("`{op}`: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("index rows {rows:?} cols {cols:?} out of range for shape {shape}")]
    BadIndex {
        shape: Shape,
        rows: (usize, usize),
        cols: (usize, usize),
    },
    #[error("duplicate declaration id {0}")]
    DuplicateId(usize),
    #[error("sparsity entry ({row}, {col}) of `{name}` is out of range or repeated")]
    BadSparsity { name: String, row: usize, col: usize },
    #[error("reference to undeclared symbol `{0}`")]
    Undeclared(String),
    #[error("objective must be scalar, found shape {0}")]
    NonScalarObjective(Shape),
    #[error("not DCP: {0}")]
    NotDcp(String),
    #[error("`{0}` is not a valid C identifier")]
    BadName(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("no value supplied for `{0}`")]
    MissingValue(String),
    #[error("value for `{name}` has shape {found}, expected {expected}")]
    ValueShape {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error("problem has no objective")]
    MissingObjective,
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },
}
