use std::collections::{BTreeMap, HashMap};

use crate::ast::{check_dpp, ConstraintKind, Expr, Op, Problem};
use crate::sparse::{CscMatrix, FlattenLayout};

use super::coef::{Coef, CONST};
use super::linform::{LinEntry, LinForm, NonAffine};
use super::maps::{AffineMap, DependencyTable, RetrievalMap, VarBlock};
use super::{CanonError, CanonQP, Segments};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    /// `lin == 0`
    Eq,
    /// `lin >= 0`
    Ge,
    /// `lin <= 0`
    Le,
}

#[derive(Debug)]
struct Row {
    lin: LinEntry,
    kind: RowKind,
}

/// A reduced expression: affine part plus `weight * ||x[start..start+len]||^2`
/// terms. Quadratic terms only occur on scalars.
#[derive(Debug)]
struct Canon {
    lin: LinForm,
    quad: Vec<(usize, usize, Coef)>,
}

impl Canon {
    fn affine(lin: LinForm) -> Canon {
        Canon { lin, quad: Vec::new() }
    }
}

struct Reducer<'a> {
    layout: &'a FlattenLayout,
    param_block: HashMap<usize, usize>,
    var_offset: HashMap<usize, usize>,
    n: usize,
    rows: Vec<Row>,
}

fn non_affine(e: &Expr) -> CanonError {
    CanonError::NotAffine(e.to_string())
}

fn not_qp(e: &Expr, why: &str) -> CanonError {
    CanonError::NotQuadRepresentable(format!("{why}: {e}"))
}

impl Reducer<'_> {
    fn fresh(&mut self, len: usize) -> usize {
        let start = self.n;
        self.n += len;
        start
    }

    fn push_rows(&mut self, lin: &LinForm, kind: RowKind) {
        for e in &lin.entries {
            self.rows.push(Row { lin: e.clone(), kind });
        }
    }

    fn affine_arg(&mut self, e: &Expr) -> Result<LinForm, CanonError> {
        let c = self.reduce(&e.args[0])?;
        if !c.quad.is_empty() {
            return Err(not_qp(e, "quadratic term inside an atom"));
        }
        Ok(c.lin)
    }

    /// Numeric value of a variable- and parameter-free form.
    fn numeric(lin: &LinForm) -> Option<Vec<f64>> {
        lin.entries
            .iter()
            .map(|en| (en.terms.is_empty() && en.offset.is_constant()).then(|| en.offset.constant_value()))
            .collect()
    }

    fn reduce(&mut self, e: &Expr) -> Result<Canon, CanonError> {
        let wrap = |r: Result<LinForm, NonAffine>| r.map_err(|_| non_affine(e));
        Ok(match &e.op {
            Op::Const(m) => Canon::affine(LinForm::constant(m)),
            Op::Var(v) => Canon::affine(LinForm::var_block(
                self.var_offset[&v.id],
                v.shape.rows,
                v.shape.cols,
            )),
            Op::Param(p) => {
                let k = self.param_block[&p.id];
                let mut entries = Vec::with_capacity(p.shape.size());
                for c in 0..p.shape.cols {
                    for r in 0..p.shape.rows {
                        let coef = self.layout.index(k, r, c).map(Coef::param).unwrap_or_default();
                        entries.push(LinEntry::constant(coef));
                    }
                }
                Canon::affine(LinForm::from_entries(p.shape.rows, p.shape.cols, entries))
            }
            Op::Add => {
                let mut parts = e.args.iter().map(|a| self.reduce(a));
                let mut acc = parts.next().expect("add has arguments")?;
                for part in parts {
                    let part = part?;
                    acc.lin = acc.lin.add(&part.lin);
                    acc.quad.extend(part.quad);
                }
                if !acc.quad.is_empty() && !acc.lin.is_scalar() {
                    return Err(not_qp(e, "quadratic term broadcast to a matrix"));
                }
                acc
            }
            Op::Neg => {
                let a = self.reduce(&e.args[0])?;
                Canon {
                    lin: a.lin.neg(),
                    quad: a.quad.into_iter().map(|(s, l, w)| (s, l, w.neg())).collect(),
                }
            }
            Op::MulElemwise | Op::MatMul => {
                let a = self.reduce(&e.args[0])?;
                let b = self.reduce(&e.args[1])?;
                let lin = if matches!(e.op, Op::MatMul) {
                    wrap(a.lin.matmul(&b.lin))?
                } else {
                    wrap(a.lin.mul_elem(&b.lin))?
                };
                let quad = match (a.quad.is_empty(), b.quad.is_empty()) {
                    (true, true) => Vec::new(),
                    (false, false) => return Err(not_qp(e, "product of quadratic terms")),
                    (qa, _) => {
                        let (q, factor) = if qa { (b.quad, &a.lin) } else { (a.quad, &b.lin) };
                        if !lin.is_scalar() || !factor.is_scalar() || !factor.is_constant() {
                            return Err(not_qp(e, "quadratic term scaled by a non-constant"));
                        }
                        let s = &factor.entries[0].offset;
                        q.into_iter()
                            .map(|(st, l, w)| w.mul(s).map(|w| (st, l, w)).ok_or(NonAffine))
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|_| non_affine(e))?
                    }
                };
                Canon { lin, quad }
            }
            Op::Index { rows, cols } => {
                let a = self.reduce(&e.args[0])?;
                Canon {
                    lin: a.lin.index(*rows, *cols),
                    quad: a.quad,
                }
            }
            Op::Transpose => {
                let a = self.reduce(&e.args[0])?;
                Canon {
                    lin: a.lin.transpose(),
                    quad: a.quad,
                }
            }
            Op::Sum => {
                let a = self.reduce(&e.args[0])?;
                Canon {
                    lin: a.lin.sum(),
                    quad: a.quad,
                }
            }
            Op::Hstack | Op::Vstack => {
                let mut parts = Vec::with_capacity(e.args.len());
                for a in &e.args {
                    let c = self.reduce(a)?;
                    if !c.quad.is_empty() && e.args.len() > 1 {
                        return Err(not_qp(e, "quadratic term inside a stack"));
                    }
                    parts.push(c);
                }
                let quad = if parts.len() == 1 { std::mem::take(&mut parts[0].quad) } else { Vec::new() };
                let lins: Vec<LinForm> = parts.into_iter().map(|c| c.lin).collect();
                let lin = if matches!(e.op, Op::Hstack) {
                    LinForm::hstack(&lins)
                } else {
                    LinForm::vstack(&lins)
                };
                Canon { lin, quad }
            }
            Op::SumSquares => {
                let arg = self.affine_arg(e)?;
                if let Some(vals) = Reducer::numeric(&arg) {
                    let s = vals.iter().map(|v| v * v).sum();
                    return Ok(Canon::affine(LinForm::from_entries(
                        1,
                        1,
                        vec![LinEntry::constant(Coef::constant(s))],
                    )));
                }
                let k = arg.len();
                let t = self.fresh(k);
                let tl = LinForm::var_block(t, arg.rows, arg.cols);
                if e.args[0].curvature.is_affine() {
                    // t = e
                    self.push_rows(&arg.add(&tl.neg()), RowKind::Eq);
                } else {
                    // nonnegative convex argument: t >= e
                    self.push_rows(&tl.add(&arg.neg()), RowKind::Ge);
                }
                Canon {
                    lin: LinForm::constant(&nalgebra::DMatrix::zeros(1, 1)),
                    quad: vec![(t, k, Coef::constant(1.0))],
                }
            }
            Op::Abs | Op::Norm1 | Op::PosPart | Op::NegPart => {
                let arg = self.affine_arg(e)?;
                if let Some(vals) = Reducer::numeric(&arg) {
                    let f = |v: f64| match e.op {
                        Op::Abs | Op::Norm1 => v.abs(),
                        Op::PosPart => v.max(0.0),
                        _ => (-v).max(0.0),
                    };
                    let m = nalgebra::DMatrix::from_iterator(arg.rows, arg.cols, vals.into_iter().map(f));
                    let lin = LinForm::constant(&m);
                    return Ok(Canon::affine(if matches!(e.op, Op::Norm1) { lin.sum() } else { lin }));
                }
                let affine = e.args[0].curvature.is_affine();
                if !affine && !matches!(e.op, Op::PosPart) {
                    return Err(not_qp(e, "atom argument must be affine"));
                }
                let t = self.fresh(arg.len());
                let tl = LinForm::var_block(t, arg.rows, arg.cols);
                match e.op {
                    Op::Abs | Op::Norm1 => {
                        self.push_rows(&tl.add(&arg.neg()), RowKind::Ge);
                        self.push_rows(&tl.add(&arg), RowKind::Ge);
                    }
                    Op::PosPart => {
                        self.push_rows(&tl.add(&arg.neg()), RowKind::Ge);
                        self.push_rows(&tl, RowKind::Ge);
                    }
                    _ => {
                        self.push_rows(&tl.add(&arg), RowKind::Ge);
                        self.push_rows(&tl, RowKind::Ge);
                    }
                }
                Canon::affine(if matches!(e.op, Op::Norm1) { tl.sum() } else { tl })
            }
        })
    }
}

/// Rewrite a problem into `minimize 1/2 x'Px + q'x s.t. l <= Ax <= u` and
/// extract the affine parameter map, the retrieval map and the dependency
/// table.
pub fn canonicalize(
    p: &Problem,
) -> Result<(CanonQP, AffineMap, RetrievalMap, DependencyTable), CanonError> {
    let report = check_dpp(p);
    if !report.is_compliant() {
        return Err(CanonError::NotDpp(report));
    }
    let layout = FlattenLayout::new(
        p.parameters
            .iter()
            .map(|q| (q.shape.rows, q.shape.cols, q.sparsity.clone())),
    )?;
    let d = layout.len();
    let mut var_offset = HashMap::new();
    let mut blocks = Vec::new();
    let mut n_user = 0;
    for v in &p.variables {
        var_offset.insert(v.id, n_user);
        blocks.push(VarBlock {
            name: v.name.clone(),
            rows: v.shape.rows,
            cols: v.shape.cols,
            offset: n_user,
        });
        n_user += v.shape.size();
    }
    let mut red = Reducer {
        layout: &layout,
        param_block: p.parameters.iter().enumerate().map(|(k, q)| (q.id, k)).collect(),
        var_offset,
        n: n_user,
        rows: Vec::new(),
    };

    let objective = p.minimization_objective();
    let obj = red.reduce(&objective)?;
    for c in &p.constraints {
        let (target, kind) = match (c.kind, &c.expr.op) {
            (ConstraintKind::EqZero, _) => (&c.expr, RowKind::Eq),
            (ConstraintKind::NonPos, Op::Neg) if c.expr.args[0].curvature.is_affine() => {
                (&c.expr.args[0], RowKind::Ge)
            }
            (ConstraintKind::NonPos, _) => (&c.expr, RowKind::Le),
        };
        let r = red.reduce(target)?;
        if !r.quad.is_empty() {
            return Err(not_qp(&c.expr, "quadratic term in a constraint"));
        }
        red.push_rows(&r.lin, kind);
    }

    let n = red.n;
    let m = red.rows.len();

    let mut p_entries: BTreeMap<(usize, usize), Coef> = BTreeMap::new();
    for (start, len, w) in &obj.quad {
        let diag = w.scale(2.0);
        for j in *start..start + len {
            p_entries.entry((j, j)).or_default().add_assign(&diag);
        }
    }
    p_entries.retain(|_, c| !c.is_zero());
    let mut q = vec![Coef::zero(); n];
    for (j, c) in &obj.lin.entries[0].terms {
        q[*j] = c.clone();
    }

    let mut a_entries: Vec<(usize, usize, &Coef)> = Vec::new();
    for (i, row) in red.rows.iter().enumerate() {
        for (j, c) in &row.lin.terms {
            a_entries.push((j.to_owned(), i, c));
        }
    }
    a_entries.sort_by_key(|&(j, i, _)| (j, i));

    let segments = Segments::new(p_entries.len(), n, m, a_entries.len());
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let push_coef = |row: usize, c: &Coef, triplets: &mut Vec<(usize, usize, f64)>| {
        for &(col, v) in c.entries() {
            triplets.push((row, if col == CONST { d } else { col }, v));
        }
    };
    for (k, c) in p_entries.values().enumerate() {
        push_coef(segments.p.start + k, c, &mut triplets);
    }
    for (j, c) in q.iter().enumerate() {
        push_coef(segments.q.start + j, c, &mut triplets);
    }
    for (i, row) in red.rows.iter().enumerate() {
        let rhs = row.lin.offset.neg();
        let (lo, hi) = match row.kind {
            RowKind::Eq => (Some(&rhs), Some(&rhs)),
            RowKind::Ge => (Some(&rhs), None),
            RowKind::Le => (None, Some(&rhs)),
        };
        match lo {
            Some(c) => push_coef(segments.l.start + i, c, &mut triplets),
            None => triplets.push((segments.l.start + i, d, f64::NEG_INFINITY)),
        }
        match hi {
            Some(c) => push_coef(segments.u.start + i, c, &mut triplets),
            None => triplets.push((segments.u.start + i, d, f64::INFINITY)),
        }
    }
    for (k, (_, _, c)) in a_entries.iter().enumerate() {
        push_coef(segments.a.start + k, c, &mut triplets);
    }
    let c = CscMatrix::from_triplets(segments.total(), d + 1, &triplets)?;

    let p_triplets: Vec<(usize, usize, f64)> = p_entries
        .iter()
        .map(|(&(col, row), c)| (row, col, c.constant_value()))
        .collect();
    let a_triplets: Vec<(usize, usize, f64)> = a_entries
        .iter()
        .map(|&(j, i, c)| (i, j, c.constant_value()))
        .collect();
    let canon = CanonQP {
        n,
        m,
        n_user,
        p_pattern: CscMatrix::from_triplets(n, n, &p_triplets)?,
        a_pattern: CscMatrix::from_triplets(m, n, &a_triplets)?,
        segments,
    };
    let names = p.parameters.iter().map(|q| q.name.clone()).collect();
    let cmap = AffineMap::new(c, layout, names);
    let deps = DependencyTable::build(&cmap, &canon.segments);
    let rmap = RetrievalMap::prefix_selector(blocks, n);
    Ok((canon, cmap, rmap, deps))
}
