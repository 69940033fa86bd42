use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::ast::Values;
use crate::sparse::{CscMatrix, FlattenLayout};

use super::{CanonError, Segment, Segments};

/// `theta_tilde = C [theta; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineMap {
    /// `|theta_tilde| x (d + 1)`; the last column is the constant term.
    pub c: CscMatrix,
    pub layout: FlattenLayout,
    /// Parameter names in declaration order, matching the layout blocks.
    pub names: Vec<String>,
    /// Dense copy of the constant column.
    #[serde(skip)]
    pub constant: Vec<f64>,
    /// Parameter columns of C stored row by row (the CSC form of their
    /// transpose), used to recompute single rows.
    #[serde(skip)]
    pub by_row: CscMatrix,
}

impl AffineMap {
    pub fn new(c: CscMatrix, layout: FlattenLayout, names: Vec<String>) -> AffineMap {
        let d = layout.len();
        let mut constant = vec![0.0; c.nrows];
        for (r, v) in c.column(d) {
            constant[r] = v;
        }
        let param_part: Vec<(usize, usize, f64)> = c.triplets().filter(|&(_, col, _)| col < d).collect();
        let by_row = CscMatrix::from_triplets(c.nrows, d, &param_part)
            .expect("submatrix of a valid matrix")
            .transpose();
        AffineMap {
            c,
            layout,
            names,
            constant,
            by_row,
        }
    }

    /// Length of the flattened parameter vector.
    pub fn d(&self) -> usize {
        self.layout.len()
    }

    pub fn len(&self) -> usize {
        self.c.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows == 0
    }

    pub fn eval_params(&self, theta: &[f64]) -> Result<Vec<f64>, CanonError> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(theta, &mut out)?;
        Ok(out)
    }

    /// Constant column first, then parameter columns in ascending order.
    pub fn eval_into(&self, theta: &[f64], out: &mut [f64]) -> Result<(), CanonError> {
        let d = self.d();
        if theta.len() != d {
            return Err(CanonError::LengthMismatch {
                what: "theta",
                expected: d,
                found: theta.len(),
            });
        }
        if out.len() != self.len() {
            return Err(CanonError::LengthMismatch {
                what: "theta_tilde",
                expected: self.len(),
                found: out.len(),
            });
        }
        out.copy_from_slice(&self.constant);
        for (col, &t) in theta.iter().enumerate() {
            for p in self.c.col_ptr[col]..self.c.col_ptr[col + 1] {
                out[self.c.row_idx[p]] += self.c.values[p] * t;
            }
        }
        Ok(())
    }

    /// Recompute row `r` from scratch with the same summation order as
    /// [`AffineMap::eval_into`].
    pub fn eval_row(&self, r: usize, theta: &[f64]) -> f64 {
        let mut acc = self.constant[r];
        for p in self.by_row.col_ptr[r]..self.by_row.col_ptr[r + 1] {
            acc += self.by_row.values[p] * theta[self.by_row.row_idx[p]];
        }
        acc
    }

    /// Stored entries of parameter `k` from a dense value.
    pub fn flatten_one(&self, k: usize, value: &DMatrix<f64>) -> Result<Vec<f64>, CanonError> {
        Ok(self.layout.gather(k, value.as_slice())?)
    }

    /// Flatten named parameter values into theta. Every parameter must be
    /// present with its declared shape.
    pub fn flatten(&self, values: &Values) -> Result<Vec<f64>, CanonError> {
        let mut theta = vec![0.0; self.d()];
        for (k, name) in self.names.iter().enumerate() {
            let v = values
                .get(name)
                .ok_or_else(|| CanonError::MissingParameter(name.clone()))?;
            let b = self.layout.block(k);
            if v.nrows() != b.rows || v.ncols() != b.cols {
                return Err(CanonError::LengthMismatch {
                    what: "parameter value",
                    expected: b.rows * b.cols,
                    found: v.len(),
                });
            }
            let stored = self.flatten_one(k, v)?;
            theta[b.offset..b.offset + stored.len()].copy_from_slice(&stored);
        }
        Ok(theta)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Placement of one user variable in the canonical variable vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// `x = R [x_tilde; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMap {
    pub r: CscMatrix,
    /// Every row of R picks exactly one canonical variable with weight 1.
    pub selector: bool,
    pub blocks: Vec<VarBlock>,
    /// Source index of each output entry when `selector` holds.
    #[serde(skip)]
    pub select: Vec<usize>,
}

impl RetrievalMap {
    /// R = [I 0 | 0] selecting the first `sum(block sizes)` canonical
    /// variables.
    pub fn prefix_selector(blocks: Vec<VarBlock>, n_tilde: usize) -> RetrievalMap {
        let n_user: usize = blocks.iter().map(|b| b.rows * b.cols).sum();
        let triplets: Vec<_> = (0..n_user).map(|i| (i, i, 1.0)).collect();
        let r = CscMatrix::from_triplets(n_user, n_tilde + 1, &triplets).expect("in bounds");
        RetrievalMap::from_matrix(r, blocks)
    }

    pub fn from_matrix(r: CscMatrix, blocks: Vec<VarBlock>) -> RetrievalMap {
        let (selector, select) = RetrievalMap::detect_selector(&r);
        RetrievalMap {
            r,
            selector,
            blocks,
            select,
        }
    }

    fn detect_selector(r: &CscMatrix) -> (bool, Vec<usize>) {
        let mut src = vec![None; r.nrows];
        let mut count = vec![0usize; r.nrows];
        for (row, col, v) in r.triplets() {
            count[row] += 1;
            if v == 1.0 && col + 1 < r.ncols {
                src[row] = Some(col);
            }
        }
        let ok = (0..r.nrows).all(|i| count[i] == 1 && src[i].is_some());
        if ok {
            (true, src.into_iter().map(|s| s.expect("checked")).collect())
        } else {
            (false, Vec::new())
        }
    }

    pub fn n_tilde(&self) -> usize {
        self.r.ncols - 1
    }

    pub fn retrieve(&self, x_tilde: &[f64]) -> Result<Vec<f64>, CanonError> {
        if x_tilde.len() != self.n_tilde() {
            return Err(CanonError::LengthMismatch {
                what: "x_tilde",
                expected: self.n_tilde(),
                found: x_tilde.len(),
            });
        }
        if self.selector {
            return Ok(self.select.iter().map(|&j| x_tilde[j]).collect());
        }
        let mut out = vec![0.0; self.r.nrows];
        for c in 0..self.r.ncols {
            let x = if c == self.n_tilde() { 1.0 } else { x_tilde[c] };
            for (row, v) in self.r.column(c) {
                out[row] += v * x;
            }
        }
        Ok(out)
    }

    /// Retrieved values reshaped per user variable.
    pub fn retrieve_values(&self, x_tilde: &[f64]) -> Result<Values, CanonError> {
        let x = self.retrieve(x_tilde)?;
        let mut out = Values::new();
        let mut at = 0;
        for b in &self.blocks {
            let len = b.rows * b.cols;
            out.insert(b.name.clone(), DMatrix::from_column_slice(b.rows, b.cols, &x[at..at + len]));
            at += len;
        }
        Ok(out)
    }
}

/// Which rows of theta_tilde each user parameter influences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependencyTable {
    /// Sorted rows of C with a nonzero in the parameter's columns.
    pub rows: Vec<Vec<usize>>,
    /// Segments containing those rows.
    pub segments: Vec<BTreeSet<Segment>>,
    /// Parameter owning each column of C (constant column excluded).
    pub col_param: Vec<usize>,
    /// Parameters sharing at least one row with the given parameter,
    /// including itself.
    pub coupled: Vec<Vec<usize>>,
}

impl DependencyTable {
    pub fn build(map: &AffineMap, segs: &Segments) -> DependencyTable {
        let np = map.layout.blocks().len();
        let mut col_param = vec![0; map.d()];
        for (k, b) in map.layout.blocks().iter().enumerate() {
            col_param[b.offset..b.offset + b.len()].fill(k);
        }
        let mut rows = Vec::with_capacity(np);
        let mut segments = Vec::with_capacity(np);
        for b in map.layout.blocks() {
            let mut r: Vec<usize> = (b.offset..b.offset + b.len())
                .flat_map(|col| map.c.column(col).map(|(row, _)| row))
                .collect();
            r.sort_unstable();
            r.dedup();
            segments.push(r.iter().map(|&row| segs.of_row(row)).collect());
            rows.push(r);
        }
        let coupled = rows
            .iter()
            .map(|r: &Vec<usize>| {
                let mut ks: Vec<usize> = r
                    .iter()
                    .flat_map(|&row| {
                        (map.by_row.col_ptr[row]..map.by_row.col_ptr[row + 1])
                            .map(|p| col_param[map.by_row.row_idx[p]])
                    })
                    .collect();
                ks.sort_unstable();
                ks.dedup();
                ks
            })
            .collect();
        DependencyTable {
            rows,
            segments,
            col_param,
            coupled,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    /// Union of touched rows for a set of parameters.
    pub fn rows_for(&self, changed: &[usize]) -> Result<Vec<usize>, CanonError> {
        let mut out = Vec::new();
        for &k in changed {
            out.extend_from_slice(self.rows.get(k).ok_or(CanonError::UnknownParameter(k))?);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// Recompute the rows of `theta_tilde` that depend on the parameters in
/// `changed`; every other entry is left untouched. Returns the segments
/// whose solver data must be refreshed.
pub fn partial_update(
    map: &AffineMap,
    deps: &DependencyTable,
    theta: &[f64],
    changed: &[usize],
    theta_tilde: &mut [f64],
) -> Result<BTreeSet<Segment>, CanonError> {
    if theta.len() != map.d() {
        return Err(CanonError::LengthMismatch {
            what: "theta",
            expected: map.d(),
            found: theta.len(),
        });
    }
    if theta_tilde.len() != map.len() {
        return Err(CanonError::LengthMismatch {
            what: "theta_tilde",
            expected: map.len(),
            found: theta_tilde.len(),
        });
    }
    let mut touched = BTreeSet::new();
    for &k in changed {
        let segs = deps.segments.get(k).ok_or(CanonError::UnknownParameter(k))?;
        touched.extend(segs.iter().copied());
    }
    for r in deps.rows_for(changed)? {
        theta_tilde[r] = map.eval_row(r, theta);
    }
    Ok(touched)
}
