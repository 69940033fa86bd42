use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::EmptyShape { rows, cols });
        }
        Ok(Shape { rows, cols })
    }

    pub const fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn transposed(&self) -> Self {
        Shape {
            rows: self.cols,
            cols: self.rows,
        }
    }

    /// Elementwise broadcast: equal shapes or one side scalar.
    pub fn broadcast(self, other: Shape) -> Option<Shape> {
        if self == other || other.is_scalar() {
            Some(self)
        } else if self.is_scalar() {
            Some(other)
        } else {
            None
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Sign {
    Nonneg,
    Nonpos,
    #[default]
    Unknown,
}

impl Sign {
    fn of_values<'a>(mut values: impl Iterator<Item = &'a f64> + Clone) -> Sign {
        if values.clone().all(|&v| v >= 0.0) {
            Sign::Nonneg
        } else if values.all(|&v| v <= 0.0) {
            Sign::Nonpos
        } else {
            Sign::Unknown
        }
    }

    pub fn negate(self) -> Sign {
        match self {
            Sign::Nonneg => Sign::Nonpos,
            Sign::Nonpos => Sign::Nonneg,
            Sign::Unknown => Sign::Unknown,
        }
    }

    fn join(self, other: Sign) -> Sign {
        if self == other {
            self
        } else {
            Sign::Unknown
        }
    }

    fn product(self, other: Sign) -> Sign {
        match (self, other) {
            (Sign::Unknown, _) | (_, Sign::Unknown) => Sign::Unknown,
            (a, b) if a == b => Sign::Nonneg,
            _ => Sign::Nonpos,
        }
    }
}

/// DCP curvature. Ordered as a lattice:
/// constant < affine < {convex, concave} < unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Curvature {
    Constant,
    Affine,
    Convex,
    Concave,
    Unknown,
}

impl Curvature {
    pub fn is_constant(self) -> bool {
        self == Curvature::Constant
    }

    pub fn is_affine(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine)
    }

    pub fn is_convex(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Convex)
    }

    pub fn is_concave(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Concave)
    }

    /// Partial order of the lattice; `None` for convex vs concave.
    pub fn le(self, other: Curvature) -> bool {
        use Curvature::*;
        match (self, other) {
            (a, b) if a == b => true,
            (Constant, _) => true,
            (Affine, Convex | Concave | Unknown) => true,
            (Convex | Concave, Unknown) => true,
            _ => false,
        }
    }

    pub fn negate(self) -> Curvature {
        match self {
            Curvature::Convex => Curvature::Concave,
            Curvature::Concave => Curvature::Convex,
            c => c,
        }
    }

    /// Curvature of a sum.
    pub fn join(self, other: Curvature) -> Curvature {
        if self.is_constant() && other.is_constant() {
            Curvature::Constant
        } else if self.is_affine() && other.is_affine() {
            Curvature::Affine
        } else if self.is_convex() && other.is_convex() {
            Curvature::Convex
        } else if self.is_concave() && other.is_concave() {
            Curvature::Concave
        } else {
            Curvature::Unknown
        }
    }

    /// Curvature of `c * self` for a constant factor of the given sign.
    fn scaled_by(self, sign: Sign) -> Curvature {
        match (sign, self) {
            (_, c) if c.is_affine() => c,
            (Sign::Nonneg, c) => c,
            (Sign::Nonpos, c) => c.negate(),
            (Sign::Unknown, _) => Curvature::Unknown,
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Curvature::Constant => "constant",
            Curvature::Affine => "affine",
            Curvature::Convex => "convex",
            Curvature::Concave => "concave",
            Curvature::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub id: usize,
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub id: usize,
    pub name: String,
    pub shape: Shape,
    pub sign: Sign,
    /// Declared nonzero positions; `None` means dense.
    pub sparsity: Option<Vec<(usize, usize)>>,
}

impl Parameter {
    /// Whether entry `(row, col)` may be nonzero.
    pub fn is_stored(&self, row: usize, col: usize) -> bool {
        match &self.sparsity {
            None => row < self.shape.rows && col < self.shape.cols,
            Some(s) => s.contains(&(row, col)),
        }
    }
}

/// Checks the C identifier rule: letters, digits and underscores, not
/// starting with a digit.
pub fn is_c_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Const(DMatrix<f64>),
    Var(Arc<Variable>),
    Param(Arc<Parameter>),
    Add,
    Neg,
    MulElemwise,
    MatMul,
    /// Inclusive zero-based row and column bounds.
    Index {
        rows: (usize, usize),
        cols: (usize, usize),
    },
    Transpose,
    Sum,
    Hstack,
    Vstack,
    SumSquares,
    Norm1,
    Abs,
    PosPart,
    NegPart,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Var(_) => "var",
            Op::Param(_) => "param",
            Op::Add => "add",
            Op::Neg => "neg",
            Op::MulElemwise => "mul",
            Op::MatMul => "matmul",
            Op::Index { .. } => "index",
            Op::Transpose => "transpose",
            Op::Sum => "sum",
            Op::Hstack => "hstack",
            Op::Vstack => "vstack",
            Op::SumSquares => "sum_squares",
            Op::Norm1 => "norm1",
            Op::Abs => "abs",
            Op::PosPart => "pos",
            Op::NegPart => "neg_part",
        }
    }

    /// Atoms that are not affine in their argument.
    pub fn is_nonlinear_atom(&self) -> bool {
        matches!(
            self,
            Op::SumSquares | Op::Norm1 | Op::Abs | Op::PosPart | Op::NegPart
        )
    }

    pub fn is_product(&self) -> bool {
        matches!(self, Op::MulElemwise | Op::MatMul)
    }
}

#[derive(Debug, PartialEq)]
pub struct ExprNode {
    pub op: Op,
    pub args: Vec<Expr>,
    pub shape: Shape,
    pub curvature: Curvature,
    pub sign: Sign,
    pub has_params: bool,
    pub has_vars: bool,
}

/// Immutable expression tree node; cloning is cheap.
///
/// Shape, curvature, sign and parameter/variable dependence are computed
/// once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<ExprNode>);

impl std::ops::Deref for Expr {
    type Target = ExprNode;
    fn deref(&self) -> &ExprNode {
        &self.0
    }
}

impl Expr {
    fn make(op: Op, args: Vec<Expr>, shape: Shape, curvature: Curvature, sign: Sign) -> Expr {
        let has_params = matches!(op, Op::Param(_)) || args.iter().any(|a| a.has_params);
        let has_vars = matches!(op, Op::Var(_)) || args.iter().any(|a| a.has_vars);
        Expr(Arc::new(ExprNode {
            op,
            args,
            shape,
            curvature,
            sign,
            has_params,
            has_vars,
        }))
    }

    pub fn constant(value: DMatrix<f64>) -> Result<Expr, ModelError> {
        let shape = Shape::new(value.nrows(), value.ncols())?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteConstant);
        }
        let sign = Sign::of_values(value.iter());
        Ok(Expr::make(Op::Const(value), vec![], shape, Curvature::Constant, sign))
    }

    pub fn scalar(v: f64) -> Expr {
        Expr::constant(DMatrix::from_element(1, 1, v)).expect("finite scalar")
    }

    pub fn var(v: &Arc<Variable>) -> Expr {
        Expr::make(Op::Var(v.clone()), vec![], v.shape, Curvature::Affine, Sign::Unknown)
    }

    pub fn param(p: &Arc<Parameter>) -> Expr {
        Expr::make(Op::Param(p.clone()), vec![], p.shape, Curvature::Constant, p.sign)
    }

    pub fn node(&self) -> &ExprNode {
        &self.0
    }

    /// n-ary sum with scalar broadcasting.
    pub fn sum_of(terms: &[Expr]) -> Result<Expr, ModelError> {
        if terms.len() < 2 {
            return match terms.first() {
                Some(t) => Ok(t.clone()),
                None => Err(ModelError::Arity { op: "add", expected: 2, found: 0 }),
            };
        }
        let mut shape = terms[0].shape;
        let mut curv = terms[0].curvature;
        let mut sign = terms[0].sign;
        for t in &terms[1..] {
            shape = shape.broadcast(t.shape).ok_or(ModelError::ShapeMismatch {
                op: "add",
                left: shape,
                right: t.shape,
            })?;
            curv = curv.join(t.curvature);
            sign = sign.join(t.sign);
        }
        Ok(Expr::make(Op::Add, terms.to_vec(), shape, curv, sign))
    }

    pub fn plus(&self, other: &Expr) -> Result<Expr, ModelError> {
        Expr::sum_of(&[self.clone(), other.clone()])
    }

    pub fn minus(&self, other: &Expr) -> Result<Expr, ModelError> {
        Expr::sum_of(&[self.clone(), other.neg()])
    }

    pub fn neg(&self) -> Expr {
        Expr::make(
            Op::Neg,
            vec![self.clone()],
            self.shape,
            self.curvature.negate(),
            self.sign.negate(),
        )
    }

    fn product_curvature(l: &Expr, r: &Expr) -> Curvature {
        if l.curvature.is_constant() && r.curvature.is_constant() {
            Curvature::Constant
        } else if l.curvature.is_constant() {
            r.curvature.scaled_by(l.sign)
        } else if r.curvature.is_constant() {
            l.curvature.scaled_by(r.sign)
        } else {
            Curvature::Unknown
        }
    }

    /// Elementwise product with scalar broadcasting.
    pub fn mul_elem(&self, other: &Expr) -> Result<Expr, ModelError> {
        let shape = self.shape.broadcast(other.shape).ok_or(ModelError::ShapeMismatch {
            op: "mul",
            left: self.shape,
            right: other.shape,
        })?;
        Ok(Expr::make(
            Op::MulElemwise,
            vec![self.clone(), other.clone()],
            shape,
            Expr::product_curvature(self, other),
            self.sign.product(other.sign),
        ))
    }

    pub fn matmul(&self, other: &Expr) -> Result<Expr, ModelError> {
        if self.shape.cols != other.shape.rows {
            return Err(ModelError::ShapeMismatch {
                op: "matmul",
                left: self.shape,
                right: other.shape,
            });
        }
        let shape = Shape {
            rows: self.shape.rows,
            cols: other.shape.cols,
        };
        Ok(Expr::make(
            Op::MatMul,
            vec![self.clone(), other.clone()],
            shape,
            Expr::product_curvature(self, other),
            self.sign.product(other.sign),
        ))
    }

    /// Inclusive zero-based slice `self[r0..=r1, c0..=c1]`.
    pub fn index(&self, rows: RangeInclusive<usize>, cols: RangeInclusive<usize>) -> Result<Expr, ModelError> {
        let (r0, r1, c0, c1) = (*rows.start(), *rows.end(), *cols.start(), *cols.end());
        if r0 > r1 || c0 > c1 || r1 >= self.shape.rows || c1 >= self.shape.cols {
            return Err(ModelError::BadIndex {
                shape: self.shape,
                rows: (r0, r1),
                cols: (c0, c1),
            });
        }
        let shape = Shape {
            rows: r1 - r0 + 1,
            cols: c1 - c0 + 1,
        };
        Ok(Expr::make(
            Op::Index {
                rows: (r0, r1),
                cols: (c0, c1),
            },
            vec![self.clone()],
            shape,
            self.curvature,
            self.sign,
        ))
    }

    /// Column `c` as an `rows x 1` expression.
    pub fn col(&self, c: usize) -> Result<Expr, ModelError> {
        self.index(0..=self.shape.rows - 1, c..=c)
    }

    pub fn t(&self) -> Expr {
        Expr::make(
            Op::Transpose,
            vec![self.clone()],
            self.shape.transposed(),
            self.curvature,
            self.sign,
        )
    }

    /// Sum of all entries.
    pub fn sum(&self) -> Expr {
        Expr::make(Op::Sum, vec![self.clone()], Shape::scalar(), self.curvature, self.sign)
    }

    fn stack(op: Op, parts: &[Expr]) -> Result<Expr, ModelError> {
        let horizontal = matches!(op, Op::Hstack);
        let name = op.name();
        let first = parts.first().ok_or(ModelError::Arity {
            op: name,
            expected: 1,
            found: 0,
        })?;
        let mut shape = first.shape;
        let mut curv = first.curvature;
        let mut sign = first.sign;
        for p in &parts[1..] {
            let ok = if horizontal {
                p.shape.rows == shape.rows
            } else {
                p.shape.cols == shape.cols
            };
            if !ok {
                return Err(ModelError::ShapeMismatch {
                    op: name,
                    left: shape,
                    right: p.shape,
                });
            }
            if horizontal {
                shape.cols += p.shape.cols;
            } else {
                shape.rows += p.shape.rows;
            }
            curv = curv.join(p.curvature);
            sign = sign.join(p.sign);
        }
        Ok(Expr::make(op, parts.to_vec(), shape, curv, sign))
    }

    pub fn hstack(parts: &[Expr]) -> Result<Expr, ModelError> {
        Expr::stack(Op::Hstack, parts)
    }

    pub fn vstack(parts: &[Expr]) -> Result<Expr, ModelError> {
        Expr::stack(Op::Vstack, parts)
    }

    /// Curvature of an even-like atom (`sum_squares`, `abs`, `norm1`):
    /// increasing for nonnegative arguments, decreasing for nonpositive ones.
    fn even_atom_curvature(arg: &Expr) -> Curvature {
        let c = arg.curvature;
        if c.is_constant() {
            Curvature::Constant
        } else if c.is_affine()
            || (c.is_convex() && arg.sign == Sign::Nonneg)
            || (c.is_concave() && arg.sign == Sign::Nonpos)
        {
            Curvature::Convex
        } else {
            Curvature::Unknown
        }
    }

    fn atom(op: Op, arg: &Expr, shape: Shape, curvature: Curvature) -> Expr {
        Expr::make(op, vec![arg.clone()], shape, curvature, Sign::Nonneg)
    }

    pub fn sum_squares(&self) -> Expr {
        Expr::atom(Op::SumSquares, self, Shape::scalar(), Expr::even_atom_curvature(self))
    }

    pub fn norm1(&self) -> Expr {
        Expr::atom(Op::Norm1, self, Shape::scalar(), Expr::even_atom_curvature(self))
    }

    pub fn abs(&self) -> Expr {
        Expr::atom(Op::Abs, self, self.shape, Expr::even_atom_curvature(self))
    }

    /// `max(self, 0)` elementwise.
    pub fn pos(&self) -> Expr {
        let c = self.curvature;
        let curv = if c.is_constant() {
            Curvature::Constant
        } else if c.is_convex() {
            Curvature::Convex
        } else {
            Curvature::Unknown
        };
        Expr::atom(Op::PosPart, self, self.shape, curv)
    }

    /// `max(-self, 0)` elementwise.
    pub fn neg_part(&self) -> Expr {
        let c = self.curvature;
        let curv = if c.is_constant() {
            Curvature::Constant
        } else if c.is_concave() {
            Curvature::Convex
        } else {
            Curvature::Unknown
        };
        Expr::atom(Op::NegPart, self, self.shape, curv)
    }

    /// Rebuild a node of the same kind over new children, re-running shape
    /// checks. Leaves are returned unchanged.
    pub fn with_args(&self, args: Vec<Expr>) -> Result<Expr, ModelError> {
        let one = |args: &[Expr]| args[0].clone();
        Ok(match &self.op {
            Op::Const(_) | Op::Var(_) | Op::Param(_) => self.clone(),
            Op::Add => Expr::sum_of(&args)?,
            Op::Neg => one(&args).neg(),
            Op::MulElemwise => args[0].mul_elem(&args[1])?,
            Op::MatMul => args[0].matmul(&args[1])?,
            Op::Index { rows, cols } => one(&args).index(rows.0..=rows.1, cols.0..=cols.1)?,
            Op::Transpose => one(&args).t(),
            Op::Sum => one(&args).sum(),
            Op::Hstack => Expr::hstack(&args)?,
            Op::Vstack => Expr::vstack(&args)?,
            Op::SumSquares => one(&args).sum_squares(),
            Op::Norm1 => one(&args).norm1(),
            Op::Abs => one(&args).abs(),
            Op::PosPart => one(&args).pos(),
            Op::NegPart => one(&args).neg_part(),
        })
    }

    /// Visit every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for a in &self.args {
            a.walk(f);
        }
    }

    /// Names of parameters appearing in the subtree, sorted and unique.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.walk(&mut |e| {
            if let Op::Param(p) = &e.op {
                names.push(p.name.clone());
            }
        });
        names.sort();
        names.dedup();
        names
    }
}

/// The DCP curvature of an expression (parameters count as constants).
pub fn curvature(e: &Expr) -> Curvature {
    e.curvature
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.op {
            Op::Const(m) if m.len() == 1 => write!(f, "{}", m[(0, 0)]),
            Op::Const(m) => write!(f, "const{}x{}", m.nrows(), m.ncols()),
            Op::Var(v) => f.write_str(&v.name),
            Op::Param(p) => f.write_str(&p.name),
            Op::Add => {
                f.write_str("(")?;
                for (i, a) in self.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Op::Neg => write!(f, "-{}", self.args[0]),
            Op::MulElemwise => write!(f, "{}*{}", self.args[0], self.args[1]),
            Op::MatMul => write!(f, "{}@{}", self.args[0], self.args[1]),
            Op::Index { rows, cols } => {
                write!(f, "{}[{}:{},{}:{}]", self.args[0], rows.0, rows.1, cols.0, cols.1)
            }
            Op::Transpose => write!(f, "{}^T", self.args[0]),
            op => {
                write!(f, "{}(", op.name())?;
                for (i, a) in self.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
