//! Up-looking sparse LDL' factorization of a symmetric quasi-definite
//! matrix given by its upper triangle in CSC form.

use super::SolverError;
use crate::sparse::CscMatrix;

const NONE: usize = usize::MAX;

/// Symbolic structure plus numeric factors `K = L D L'` with unit lower
/// triangular `L` stored by columns (diagonal omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct Ldl {
    pub n: usize,
    pub etree: Vec<usize>,
    /// Nonzero count of each column of L.
    pub lnz: Vec<usize>,
    pub lp: Vec<usize>,
    pub li: Vec<usize>,
    pub lx: Vec<f64>,
    pub d: Vec<f64>,
    pub dinv: Vec<f64>,
    /// Number of positive entries in D after the last factorization.
    pub positive: usize,
    // scratch
    y_markers: Vec<bool>,
    y_idx: Vec<usize>,
    y_vals: Vec<f64>,
    elim: Vec<usize>,
    next_space: Vec<usize>,
}

/// Elimination tree and column counts of L for an upper-triangular pattern.
pub fn etree(k: &CscMatrix) -> Result<(Vec<usize>, Vec<usize>), SolverError> {
    let n = k.ncols;
    let mut work = vec![NONE; n];
    let mut lnz = vec![0; n];
    let mut parent = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for p in k.col_ptr[j]..k.col_ptr[j + 1] {
            let mut i = k.row_idx[p];
            if i > j {
                return Err(SolverError::NotUpperTriangular);
            }
            while work[i] != j {
                if parent[i] == NONE {
                    parent[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = parent[i];
            }
        }
    }
    Ok((parent, lnz))
}

impl Ldl {
    /// Symbolic analysis only; call [`Ldl::factor`] for the numbers.
    pub fn analyze(k: &CscMatrix) -> Result<Ldl, SolverError> {
        let n = k.ncols;
        let (etree, lnz) = etree(k)?;
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz = lp[n];
        Ok(Ldl {
            n,
            etree,
            lnz,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            positive: 0,
            y_markers: vec![false; n],
            y_idx: vec![0; n],
            y_vals: vec![0.0; n],
            elim: vec![0; n],
            next_space: vec![0; n],
        })
    }

    pub fn nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization over the pattern given to [`Ldl::analyze`].
    /// The matrix must contain every diagonal entry.
    pub fn factor(&mut self, k: &CscMatrix) -> Result<(), SolverError> {
        let n = self.n;
        self.positive = 0;
        if n == 0 {
            return Ok(());
        }
        self.y_markers.fill(false);
        self.y_vals.fill(0.0);
        self.d.fill(0.0);
        self.next_space.copy_from_slice(&self.lp[..n]);

        for col in 0..n {
            let mut nnz_y = 0;
            for p in k.col_ptr[col]..k.col_ptr[col + 1] {
                let bidx = k.row_idx[p];
                if bidx == col {
                    self.d[col] = k.values[p];
                    continue;
                }
                self.y_vals[bidx] = k.values[p];
                if !self.y_markers[bidx] {
                    self.y_markers[bidx] = true;
                    self.elim[0] = bidx;
                    let mut nnz_e = 1;
                    let mut next = self.etree[bidx];
                    while next != NONE && next < col {
                        if self.y_markers[next] {
                            break;
                        }
                        self.y_markers[next] = true;
                        self.elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        self.y_idx[nnz_y] = self.elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = self.y_idx[i];
                let end = self.next_space[c];
                let yc = self.y_vals[c];
                for j in self.lp[c]..end {
                    self.y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[end] = col;
                self.lx[end] = yc * self.dinv[c];
                self.d[col] -= yc * self.lx[end];
                self.next_space[c] += 1;
                self.y_vals[c] = 0.0;
                self.y_markers[c] = false;
            }
            if self.d[col] == 0.0 || !self.d[col].is_finite() {
                return Err(SolverError::ZeroPivot(col));
            }
            if self.d[col] > 0.0 {
                self.positive += 1;
            }
            self.dinv[col] = 1.0 / self.d[col];
        }
        Ok(())
    }

    /// Solve `L D L' x = b` in place. Uses only multiplications by the
    /// stored reciprocal diagonal.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.dinv[i];
        }
        for i in (0..self.n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
    }
}
