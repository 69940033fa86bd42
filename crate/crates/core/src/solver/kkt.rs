//! Assembly of the permuted upper triangle of
//! `[[P + sigma I, A'], [A, -diag(1/rho)]]` with maps from the problem data
//! to KKT positions, so value updates never touch the pattern.

use super::order::{invert, min_degree};
use super::SolverError;
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    DiagX(usize),
    P(usize),
    A(usize),
    Rho(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kkt {
    pub n: usize,
    pub m: usize,
    /// `perm[new] = old`.
    pub perm: Vec<usize>,
    pub pinv: Vec<usize>,
    /// Permuted upper triangle.
    pub k: CscMatrix,
    pub p_to_kkt: Vec<usize>,
    pub a_to_kkt: Vec<usize>,
    /// Position of `(j, j)` for each primal index `j`.
    pub diag_x: Vec<usize>,
    /// Position of the `-1/rho_i` entry for each constraint row.
    pub rho_to_kkt: Vec<usize>,
}

impl Kkt {
    pub fn build(
        p: &CscMatrix,
        a: &CscMatrix,
        sigma: f64,
        rho_inv: &[f64],
    ) -> Result<Kkt, SolverError> {
        let (n, m) = (p.ncols, a.nrows);
        if p.nrows != n || a.ncols != n {
            return Err(SolverError::DimensionMismatch {
                what: "A columns",
                expected: n,
                found: a.ncols,
            });
        }
        if !p.is_upper_triangular() {
            return Err(SolverError::NotUpperTriangular);
        }
        let dim = n + m;
        // (row, col) in unpermuted upper coordinates
        let mut items: Vec<(usize, usize, Source)> = Vec::with_capacity(n + p.nnz() + a.nnz() + m);
        for j in 0..n {
            items.push((j, j, Source::DiagX(j)));
        }
        for (k, (r, c, _)) in p.triplets().enumerate() {
            items.push((r, c, Source::P(k)));
        }
        for (k, (i, j, _)) in a.triplets().enumerate() {
            items.push((j, n + i, Source::A(k)));
        }
        for i in 0..m {
            items.push((n + i, n + i, Source::Rho(i)));
        }
        let pattern = CscMatrix::from_triplets(
            dim,
            dim,
            &items.iter().map(|&(r, c, _)| (r, c, 0.0)).collect::<Vec<_>>(),
        )?;
        let perm = min_degree(&pattern);
        let pinv = invert(&perm);

        let mut permuted: Vec<(usize, usize, Source)> = items
            .iter()
            .map(|&(r, c, s)| {
                let (pr, pc) = (pinv[r], pinv[c]);
                (pr.min(pc), pr.max(pc), s)
            })
            .collect();
        permuted.sort_by_key(|&(r, c, s)| (c, r, s));

        let mut col_ptr = vec![0; dim + 1];
        let mut row_idx = Vec::with_capacity(permuted.len());
        let mut p_to_kkt = vec![0; p.nnz()];
        let mut a_to_kkt = vec![0; a.nnz()];
        let mut diag_x = vec![0; n];
        let mut rho_to_kkt = vec![0; m];
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, s) in &permuted {
            if last != Some((r, c)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
            let pos = row_idx.len() - 1;
            match s {
                Source::DiagX(j) => diag_x[j] = pos,
                Source::P(k) => p_to_kkt[k] = pos,
                Source::A(k) => a_to_kkt[k] = pos,
                Source::Rho(i) => rho_to_kkt[i] = pos,
            }
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }
        let nnz = row_idx.len();
        let k = CscMatrix::from_parts(dim, dim, col_ptr, row_idx, vec![0.0; nnz])?;
        let mut kkt = Kkt {
            n,
            m,
            perm,
            pinv,
            k,
            p_to_kkt,
            a_to_kkt,
            diag_x,
            rho_to_kkt,
        };
        kkt.set_p_values(&p.values, sigma);
        kkt.set_a_values(&a.values);
        kkt.set_rho_inv(rho_inv);
        Ok(kkt)
    }

    pub fn set_p_values(&mut self, pv: &[f64], sigma: f64) {
        let v = &mut self.k.values;
        for &pos in &self.p_to_kkt {
            v[pos] = 0.0;
        }
        for &pos in &self.diag_x {
            v[pos] = sigma;
        }
        for (k, &pos) in self.p_to_kkt.iter().enumerate() {
            v[pos] += pv[k];
        }
    }

    pub fn set_a_values(&mut self, av: &[f64]) {
        for (k, &pos) in self.a_to_kkt.iter().enumerate() {
            self.k.values[pos] = av[k];
        }
    }

    pub fn set_rho_inv(&mut self, rho_inv: &[f64]) {
        for (i, &pos) in self.rho_to_kkt.iter().enumerate() {
            self.k.values[pos] = -rho_inv[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permuted_matrix_reproduces_dense_kkt() {
        let p = CscMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 0.5), (1, 1, 1.0)]).unwrap();
        let a = CscMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)])
            .unwrap();
        let sigma = 1e-3;
        let rho_inv = [10.0, 10.0, 0.01];
        let kkt = Kkt::build(&p, &a, sigma, &rho_inv).unwrap();
        assert!(kkt.k.is_upper_triangular());
        let dense = kkt.k.to_dense();
        let expect = [
            [2.0 + sigma, 0.5, 1.0, 0.0, 1.0],
            [0.5, 1.0 + sigma, 0.0, 1.0, 1.0],
            [1.0, 0.0, -10.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, -10.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, -0.01],
        ];
        for i in 0..5 {
            for j in 0..5 {
                let (pi, pj) = (kkt.pinv[i], kkt.pinv[j]);
                let got = dense[pi.min(pj)][pi.max(pj)];
                assert_eq!(got, expect[i][j], "entry ({i}, {j})");
            }
        }
    }

    #[test]
    fn missing_p_diagonal_still_gets_sigma() {
        let p = CscMatrix::zeros(2, 2);
        let a = CscMatrix::identity(2);
        let kkt = Kkt::build(&p, &a, 0.5, &[1.0, 1.0]).unwrap();
        for j in 0..2 {
            assert_eq!(kkt.k.values[kkt.diag_x[j]], 0.5);
        }
    }
}
