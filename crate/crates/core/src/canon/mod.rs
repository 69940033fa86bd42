//! Reduction of a parametrized problem to the standard QP
//!
//! ```text
//! minimize    1/2 x'Px + q'x
//! subject to  l <= Ax <= u
//! ```
//!
//! together with the affine maps `theta_tilde = C [theta; 1]` and
//! `x = R [x_tilde; 1]` and the parameter dependency table used for
//! partial updates.

mod coef;
mod linform;
mod maps;
mod reduce;

pub use coef::{Coef, CONST};
pub use linform::{LinEntry, LinForm, NonAffine};
pub use maps::{partial_update, AffineMap, DependencyTable, RetrievalMap, VarBlock};
pub use reduce::canonicalize;

use std::ops::Range;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::ast::{DppReport, ModelError};
use crate::sparse::{CscMatrix, SparseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonError {
    #[error("problem is not DPP: {}", describe_offenses(.0))]
    NotDpp(DppReport),
    #[error("parameters do not enter affinely in `{0}`")]
    NotAffine(String),
    #[error("not representable as a QP ({0})")]
    NotQuadRepresentable(String),
    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unknown parameter index {0}")]
    UnknownParameter(usize),
    #[error("no value for parameter `{0}`")]
    MissingParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

fn describe_offenses(r: &DppReport) -> String {
    r.offenses
        .iter()
        .map(|o| format!("{} at {} ({:?})", o.node, o.path, o.violation))
        .collect::<Vec<_>>()
        .join("; ")
}

/// The five blocks of the canonical parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Segment {
    P,
    Q,
    L,
    U,
    A,
}

/// Offsets of (P values, q, l, u, A values) inside theta_tilde.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segments {
    pub p: Range<usize>,
    pub q: Range<usize>,
    pub l: Range<usize>,
    pub u: Range<usize>,
    pub a: Range<usize>,
}

impl Segments {
    pub fn new(p_nnz: usize, n: usize, m: usize, a_nnz: usize) -> Segments {
        let p = 0..p_nnz;
        let q = p.end..p.end + n;
        let l = q.end..q.end + m;
        let u = l.end..l.end + m;
        let a = u.end..u.end + a_nnz;
        Segments { p, q, l, u, a }
    }

    pub fn total(&self) -> usize {
        self.a.end
    }

    pub fn range(&self, s: Segment) -> Range<usize> {
        match s {
            Segment::P => self.p.clone(),
            Segment::Q => self.q.clone(),
            Segment::L => self.l.clone(),
            Segment::U => self.u.clone(),
            Segment::A => self.a.clone(),
        }
    }

    pub fn of_row(&self, r: usize) -> Segment {
        if r < self.p.end {
            Segment::P
        } else if r < self.q.end {
            Segment::Q
        } else if r < self.l.end {
            Segment::L
        } else if r < self.u.end {
            Segment::U
        } else {
            Segment::A
        }
    }
}

/// Problem data `(P, q, A, l, u)` for one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

/// Structure of the canonical QP. Pattern values hold the constant part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonQP {
    pub n: usize,
    pub m: usize,
    /// Number of leading canonical variables that are user variables.
    pub n_user: usize,
    /// Upper triangle of P.
    pub p_pattern: CscMatrix,
    pub a_pattern: CscMatrix,
    pub segments: Segments,
}

impl CanonQP {
    pub fn assemble(&self, theta_tilde: &[f64]) -> Result<QpData, CanonError> {
        if theta_tilde.len() != self.segments.total() {
            return Err(CanonError::LengthMismatch {
                what: "theta_tilde",
                expected: self.segments.total(),
                found: theta_tilde.len(),
            });
        }
        let s = &self.segments;
        let mut p = self.p_pattern.clone();
        p.values.copy_from_slice(&theta_tilde[s.p.clone()]);
        let mut a = self.a_pattern.clone();
        a.values.copy_from_slice(&theta_tilde[s.a.clone()]);
        Ok(QpData {
            p,
            q: theta_tilde[s.q.clone()].to_vec(),
            a,
            l: theta_tilde[s.l.clone()].to_vec(),
            u: theta_tilde[s.u.clone()].to_vec(),
        })
    }

    /// `1/2 x'Px + q'x` for the given theta_tilde.
    pub fn objective(&self, theta_tilde: &[f64], x: &[f64]) -> f64 {
        let s = &self.segments;
        let mut px = vec![0.0; self.n];
        let mut p = self.p_pattern.clone();
        p.values.copy_from_slice(&theta_tilde[s.p.clone()]);
        crate::sparse::sym_upper_spmv(&p, x, &mut px);
        let q = &theta_tilde[s.q.clone()];
        (0..self.n).map(|j| 0.5 * x[j] * px[j] + q[j] * x[j]).sum()
    }
}

/// Sparse matrix as plain arrays with infinities rendered as strings,
/// since JSON has no infinity literal.
fn csc_json(m: &CscMatrix) -> serde_json::Value {
    let values: Vec<serde_json::Value> = m.values.iter().map(|&v| finite_or_string(v)).collect();
    json!({
        "nrows": m.nrows,
        "ncols": m.ncols,
        "col_ptr": m.col_ptr,
        "row_idx": m.row_idx,
        "values": values,
    })
}

pub(crate) fn finite_or_string(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

/// Inspection report for the `canonicalize` CLI subcommand.
pub fn report_json(
    canon: &CanonQP,
    cmap: &AffineMap,
    rmap: &RetrievalMap,
    deps: &DependencyTable,
) -> serde_json::Value {
    let params: Vec<serde_json::Value> = cmap
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let b = cmap.layout.block(k);
            json!({
                "name": name,
                "offset": b.offset,
                "len": b.len(),
                "rows_touched": deps.rows[k].len(),
                "segments": deps.segments[k],
            })
        })
        .collect();
    json!({
        "n_tilde": canon.n,
        "m_tilde": canon.m,
        "n_user": canon.n_user,
        "segments": canon.segments,
        "P": csc_json(&canon.p_pattern),
        "A": csc_json(&canon.a_pattern),
        "C": csc_json(&cmap.c),
        "R": csc_json(&rmap.r),
        "R_is_selector": rmap.selector,
        "parameters": params,
        "variables": rmap.blocks,
    })
}
