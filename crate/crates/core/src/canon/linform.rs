use nalgebra::DMatrix;

use super::coef::Coef;

/// A product in which both factors depend on parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonAffine;

/// One scalar entry `sum_j coef_j * xtilde[j] + offset`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinEntry {
    /// Sorted by canonical variable index, no zero coefficients.
    pub terms: Vec<(usize, Coef)>,
    pub offset: Coef,
}

impl LinEntry {
    pub fn constant(c: Coef) -> LinEntry {
        LinEntry {
            terms: Vec::new(),
            offset: c,
        }
    }

    pub fn var(j: usize) -> LinEntry {
        LinEntry {
            terms: vec![(j, Coef::constant(1.0))],
            offset: Coef::zero(),
        }
    }

    pub fn scale(&self, c: &Coef) -> Result<LinEntry, NonAffine> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (j, t) in &self.terms {
            let p = t.mul(c).ok_or(NonAffine)?;
            if !p.is_zero() {
                terms.push((*j, p));
            }
        }
        Ok(LinEntry {
            terms,
            offset: self.offset.mul(c).ok_or(NonAffine)?,
        })
    }

    pub fn neg(&self) -> LinEntry {
        LinEntry {
            terms: self.terms.iter().map(|(j, c)| (*j, c.neg())).collect(),
            offset: self.offset.neg(),
        }
    }

    pub fn add(&self, other: &LinEntry) -> LinEntry {
        let mut acc = Accum::default();
        acc.push(self);
        acc.push(other);
        acc.finish()
    }
}

/// Collects terms from several entries and merges them once.
#[derive(Default)]
struct Accum {
    terms: Vec<(usize, Coef)>,
    offset: Coef,
}

impl Accum {
    fn push(&mut self, e: &LinEntry) {
        self.terms.extend(e.terms.iter().cloned());
        self.offset.add_assign(&e.offset);
    }

    fn finish(mut self) -> LinEntry {
        self.terms.sort_by_key(|t| t.0);
        let mut terms: Vec<(usize, Coef)> = Vec::with_capacity(self.terms.len());
        for (j, c) in self.terms {
            match terms.last_mut() {
                Some((k, acc)) if *k == j => acc.add_assign(&c),
                _ => terms.push((j, c)),
            }
        }
        terms.retain(|(_, c)| !c.is_zero());
        LinEntry {
            terms,
            offset: self.offset,
        }
    }
}

/// Matrix of affine entries in canonical variables, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinForm {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<LinEntry>,
}

impl LinForm {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<LinEntry>) -> LinForm {
        debug_assert_eq!(entries.len(), rows * cols);
        LinForm { rows, cols, entries }
    }

    /// Consecutive canonical variables starting at `base`.
    pub fn var_block(base: usize, rows: usize, cols: usize) -> LinForm {
        LinForm::from_entries(rows, cols, (0..rows * cols).map(|k| LinEntry::var(base + k)).collect())
    }

    pub fn constant(m: &DMatrix<f64>) -> LinForm {
        // nalgebra storage is column-major
        let entries = m.iter().map(|&v| LinEntry::constant(Coef::constant(v))).collect();
        LinForm::from_entries(m.nrows(), m.ncols(), entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn at(&self, r: usize, c: usize) -> &LinEntry {
        &self.entries[r + c * self.rows]
    }

    /// True when no entry references a canonical variable.
    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(|e| e.terms.is_empty())
    }

    fn broadcast_pair<'a>(a: &'a LinForm, b: &'a LinForm) -> (usize, usize, usize) {
        if a.is_scalar() && !b.is_scalar() {
            (b.rows, b.cols, b.len())
        } else {
            (a.rows, a.cols, a.len())
        }
    }

    fn pick(&self, k: usize) -> &LinEntry {
        if self.is_scalar() {
            &self.entries[0]
        } else {
            &self.entries[k]
        }
    }

    pub fn add(&self, other: &LinForm) -> LinForm {
        let (rows, cols, n) = LinForm::broadcast_pair(self, other);
        let entries = (0..n).map(|k| self.pick(k).add(other.pick(k))).collect();
        LinForm::from_entries(rows, cols, entries)
    }

    pub fn neg(&self) -> LinForm {
        LinForm::from_entries(self.rows, self.cols, self.entries.iter().map(LinEntry::neg).collect())
    }

    /// Elementwise product with scalar broadcasting. One side must be free
    /// of canonical variables.
    pub fn mul_elem(&self, other: &LinForm) -> Result<LinForm, NonAffine> {
        let (rows, cols, n) = LinForm::broadcast_pair(self, other);
        let (c, e) = if self.is_constant() { (self, other) } else { (other, self) };
        if !c.is_constant() {
            return Err(NonAffine);
        }
        let entries = (0..n)
            .map(|k| e.pick(k).scale(&c.pick(k).offset))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LinForm::from_entries(rows, cols, entries))
    }

    pub fn matmul(&self, other: &LinForm) -> Result<LinForm, NonAffine> {
        debug_assert_eq!(self.cols, other.rows);
        let left_const = self.is_constant();
        if !left_const && !other.is_constant() {
            return Err(NonAffine);
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut entries = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                let mut acc = Accum::default();
                for l in 0..k {
                    let (a, b) = (self.at(i, l), other.at(l, j));
                    let prod = if left_const {
                        if a.offset.is_zero() {
                            continue;
                        }
                        b.scale(&a.offset)?
                    } else {
                        if b.offset.is_zero() {
                            continue;
                        }
                        a.scale(&b.offset)?
                    };
                    acc.push(&prod);
                }
                entries.push(acc.finish());
            }
        }
        Ok(LinForm::from_entries(m, n, entries))
    }

    /// Inclusive slice.
    pub fn index(&self, rows: (usize, usize), cols: (usize, usize)) -> LinForm {
        let mut entries = Vec::new();
        for c in cols.0..=cols.1 {
            for r in rows.0..=rows.1 {
                entries.push(self.at(r, c).clone());
            }
        }
        LinForm::from_entries(rows.1 - rows.0 + 1, cols.1 - cols.0 + 1, entries)
    }

    pub fn transpose(&self) -> LinForm {
        let mut entries = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                entries.push(self.at(r, c).clone());
            }
        }
        LinForm::from_entries(self.cols, self.rows, entries)
    }

    pub fn sum(&self) -> LinForm {
        let mut acc = Accum::default();
        for e in &self.entries {
            acc.push(e);
        }
        LinForm::from_entries(1, 1, vec![acc.finish()])
    }

    pub fn hstack(parts: &[LinForm]) -> LinForm {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let entries = parts.iter().flat_map(|p| p.entries.iter().cloned()).collect();
        LinForm::from_entries(rows, cols, entries)
    }

    pub fn vstack(parts: &[LinForm]) -> LinForm {
        let cols = parts[0].cols;
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut entries = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for p in parts {
                for r in 0..p.rows {
                    entries.push(p.at(r, c).clone());
                }
            }
        }
        LinForm::from_entries(rows, cols, entries)
    }

    /// Dense evaluation at given canonical variable and parameter values.
    pub fn eval(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_iterator(
            self.rows,
            self.cols,
            self.entries.iter().map(|e| {
                e.terms.iter().map(|(j, c)| c.eval(theta) * x[*j]).sum::<f64>() + e.offset.eval(theta)
            }),
        )
    }
}
