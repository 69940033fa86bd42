use serde::{Deserialize, Serialize};

use super::SparseError;

/// Compressed-sparse-column matrix with `f64` values.
///
/// Explicit zeros are kept: a pattern built once stays fixed while values
/// change, which is what value-only solver updates rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// An `nrows x ncols` matrix with no stored entries.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Build from raw parts, checking every structural invariant.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let m = CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Assemble from `(row, col, value)` triplets. Duplicates are summed and
    /// explicitly inserted zeros stay in the pattern.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SparseError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // Stable sort keeps duplicate summation in insertion order.
        order.sort_by_key(|&k| (triplets[k].1, triplets[k].0));

        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Dense row-major input; every entry (zeros included) is skipped when
    /// exactly zero.
    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trip).expect("indices in range by construction")
    }

    pub fn nnz(&self) -> usize {
        self.col_ptr[self.ncols]
    }

    /// Check the structural invariants of the format.
    pub fn validate(&self) -> Result<(), SparseError> {
        let bad = |msg: String| Err(SparseError::InvalidStructure(msg));
        if self.col_ptr.len() != self.ncols + 1 {
            return bad(format!(
                "col_ptr has length {}, expected {}",
                self.col_ptr.len(),
                self.ncols + 1
            ));
        }
        if self.col_ptr[0] != 0 {
            return bad("col_ptr[0] must be 0".into());
        }
        let nnz = self.col_ptr[self.ncols];
        if self.row_idx.len() != nnz || self.values.len() != nnz {
            return bad(format!(
                "nnz is {nnz} but row_idx/values have lengths {}/{}",
                self.row_idx.len(),
                self.values.len()
            ));
        }
        for c in 0..self.ncols {
            let (a, b) = (self.col_ptr[c], self.col_ptr[c + 1]);
            if a > b {
                return bad(format!("col_ptr decreases at column {c}"));
            }
            for p in a..b {
                if self.row_idx[p] >= self.nrows {
                    return bad(format!("row index {} out of range in column {c}", self.row_idx[p]));
                }
                if p > a && self.row_idx[p] <= self.row_idx[p - 1] {
                    return bad(format!("row indices not strictly increasing in column {c}"));
                }
            }
        }
        Ok(())
    }

    /// `(row, value)` pairs of column `c`.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Iterate all stored entries as `(row, col, value)` in storage order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    /// Position of entry `(row, col)` in `values`, if it is in the pattern.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| range.start + k)
    }

    /// Returns the transpose, keeping explicit zeros. Also the CSR view of
    /// `self`.
    pub fn transpose(&self) -> CscMatrix {
        let mut col_ptr = vec![0usize; self.nrows + 1];
        for &r in &self.row_idx {
            col_ptr[r + 1] += 1;
        }
        for r in 0..self.nrows {
            col_ptr[r + 1] += col_ptr[r];
        }
        let mut next = col_ptr.clone();
        let nnz = self.nnz();
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        for c in 0..self.ncols {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let dst = next[r];
                row_idx[dst] = c;
                values[dst] = self.values[p];
                next[r] += 1;
            }
        }
        CscMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            out[r][c] += v;
        }
        out
    }

    /// True if every stored entry satisfies `row <= col`.
    pub fn is_upper_triangular(&self) -> bool {
        self.triplets().all(|(r, c, _)| r <= c)
    }

    /// `true` when `other` has the same dimensions and sparsity pattern.
    pub fn same_pattern(&self, other: &CscMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    /// `y = self * x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    /// `y = self * x`, writing into a caller buffer.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<(), SparseError> {
        self.check_dims(x.len(), y.len())?;
        y.fill(0.0);
        for (c, &xc) in x.iter().enumerate() {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.values[p] * xc;
            }
        }
        Ok(())
    }

    /// `accum += self[:, cols] * x[cols]`. Columns must be sorted ascending
    /// and in range.
    pub fn spmv_columns(&self, x: &[f64], cols: &[usize], accum: &mut [f64]) -> Result<(), SparseError> {
        self.check_dims(x.len(), accum.len())?;
        for (k, &c) in cols.iter().enumerate() {
            if c >= self.ncols {
                return Err(SparseError::ColumnOutOfRange { col: c, ncols: self.ncols });
            }
            if k > 0 && cols[k - 1] >= c {
                return Err(SparseError::UnsortedColumns);
            }
        }
        for &c in cols {
            let xc = x[c];
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                accum[self.row_idx[p]] += self.values[p] * xc;
            }
        }
        Ok(())
    }

    /// `y = self^T * x` without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.nrows {
            return Err(SparseError::DimensionMismatch {
                expected: self.nrows,
                found: x.len(),
            });
        }
        Ok((0..self.ncols)
            .map(|c| self.column(c).map(|(r, v)| v * x[r]).sum())
            .collect())
    }

    fn check_dims(&self, xlen: usize, ylen: usize) -> Result<(), SparseError> {
        if xlen != self.ncols {
            return Err(SparseError::DimensionMismatch {
                expected: self.ncols,
                found: xlen,
            });
        }
        if ylen != self.nrows {
            return Err(SparseError::DimensionMismatch {
                expected: self.nrows,
                found: ylen,
            });
        }
        Ok(())
    }
}

/// `y = P x` where `P` is symmetric and only its upper triangle is stored.
pub fn sym_upper_spmv(p: &CscMatrix, x: &[f64], y: &mut [f64]) {
    y.fill(0.0);
    for c in 0..p.ncols {
        for k in p.col_ptr[c]..p.col_ptr[c + 1] {
            let r = p.row_idx[k];
            let v = p.values[k];
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_product(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| {
                let mut acc = 0.0;
                for (j, v) in row.iter().enumerate() {
                    acc += v * x[j];
                }
                acc
            })
            .collect()
    }

    fn random_csc(rng: &mut ChaCha8Rng, nrows: usize, ncols: usize, density: f64) -> CscMatrix {
        let mut trip = Vec::new();
        for r in 0..nrows {
            for c in 0..ncols {
                if rng.random::<f64>() < density {
                    trip.push((r, c, rng.random_range(-1.0..1.0)));
                }
            }
        }
        CscMatrix::from_triplets(nrows, ncols, &trip).unwrap()
    }

    #[test]
    fn identity_spmv() {
        let y = CscMatrix::identity(3).spmv(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn hand_expanded_spmv() {
        let m = CscMatrix::from_dense_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]);
        assert_eq!(m.spmv(&[5.0, 7.0]).unwrap(), vec![14.0, 0.0]);
    }

    #[test]
    fn spmv_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_csc(&mut rng, 20, 15, 0.3);
        m.validate().unwrap();
        let x: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = m.spmv(&x).unwrap();
        let want = dense_product(&m.to_dense(), &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let m = CscMatrix::identity(3);
        assert!(matches!(m.spmv(&[1.0, 2.0]), Err(SparseError::DimensionMismatch { .. })));
    }

    #[test]
    fn spmv_columns_full_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_csc(&mut rng, 6, 5, 0.5);
        let x = [1.0, -2.0, 0.5, 3.0, 4.0];
        let mut acc = vec![0.0; 6];
        m.spmv_columns(&x, &[0, 1, 2, 3, 4], &mut acc).unwrap();
        assert_eq!(acc, m.spmv(&x).unwrap());
        let before = vec![1.5; 6];
        let mut acc = before.clone();
        m.spmv_columns(&x, &[], &mut acc).unwrap();
        assert_eq!(acc, before);
    }

    #[test]
    fn spmv_columns_rejects_bad_columns() {
        let m = CscMatrix::identity(2);
        let mut acc = vec![0.0; 2];
        assert!(matches!(
            m.spmv_columns(&[1.0, 1.0], &[2], &mut acc),
            Err(SparseError::ColumnOutOfRange { col: 2, .. })
        ));
        assert!(matches!(
            m.spmv_columns(&[1.0, 1.0], &[1, 0], &mut acc),
            Err(SparseError::UnsortedColumns)
        ));
    }

    #[test]
    fn spmv_columns_split_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_csc(&mut rng, 12, 9, 0.4);
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (s, sbar): (Vec<usize>, Vec<usize>) = (0..9).partition(|_| rng.random::<bool>());
            let mut acc = vec![0.0; 12];
            m.spmv_columns(&x, &s, &mut acc).unwrap();
            m.spmv_columns(&x, &sbar, &mut acc).unwrap();
            let full = m.spmv(&x).unwrap();
            for (a, f) in acc.iter().zip(&full) {
                assert!((a - f).abs() <= 1e-12 * f.abs().max(1.0));
            }
        }
    }

    #[test]
    fn duplicates_summed() {
        let m = CscMatrix::from_triplets(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.values, vec![3.0]);
    }

    #[test]
    fn empty_triplets() {
        let m = CscMatrix::from_triplets(2, 2, &[]).unwrap();
        assert_eq!(m.col_ptr, vec![0, 0, 0]);
        assert_eq!(m.nnz(), 0);
        m.validate().unwrap();
    }

    #[test]
    fn explicit_zero_kept() {
        let m = CscMatrix::from_triplets(2, 2, &[(1, 0, 0.0), (0, 1, 1.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.find(1, 0), Some(0));
    }

    #[test]
    fn out_of_bounds_triplet() {
        let err = CscMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, SparseError::IndexOutOfBounds { row: 2, .. }));
    }

    #[test]
    fn validator_catches_broken_structure() {
        assert!(CscMatrix::from_parts(2, 1, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CscMatrix::from_parts(2, 1, vec![1, 1], vec![0], vec![1.0]).is_err());
        assert!(CscMatrix::from_parts(2, 1, vec![0, 1], vec![5], vec![1.0]).is_err());
    }

    #[test]
    fn mpc_sized_triplets_round_trip_dense() {
        // Roughly the size of the H=6 canonical constraint matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (nr, nc) = (160, 120);
        let mut trip = Vec::new();
        let mut dense = vec![vec![0.0; nc]; nr];
        for _ in 0..900 {
            let (r, c) = (rng.random_range(0..nr), rng.random_range(0..nc));
            let v = rng.random_range(-3.0..3.0);
            trip.push((r, c, v));
            dense[r][c] += v;
        }
        let m = CscMatrix::from_triplets(nr, nc, &trip).unwrap();
        m.validate().unwrap();
        assert_eq!(m.to_dense(), dense);
        assert_eq!(m.transpose().transpose(), m);
    }

    proptest! {
        #[test]
        fn spmv_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_csc(&mut rng, 10, 8, 0.35);
            let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.spmv(&comb).unwrap();
            let mu = m.spmv(&u).unwrap();
            let mv = m.spmv(&v).unwrap();
            for i in 0..10 {
                let rhs = a * mu[i] + b * mv[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }

        #[test]
        fn triplet_constructor_upholds_invariants(
            entries in proptest::collection::vec((0usize..7, 0usize..5, -5.0f64..5.0), 0..40)
        ) {
            let m = CscMatrix::from_triplets(7, 5, &entries).unwrap();
            prop_assert!(m.validate().is_ok());
            prop_assert!(m.transpose().validate().is_ok());
        }
    }
}
