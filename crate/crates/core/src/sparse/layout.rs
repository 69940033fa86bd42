use serde::{Deserialize, Serialize};

use super::SparseError;

/// Placement of one matrix-valued quantity inside a flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Declared nonzeros in column-major order; `None` means dense.
    pub entries: Option<Vec<(usize, usize)>>,
}

impl Block {
    pub fn len(&self) -> usize {
        match &self.entries {
            Some(e) => e.len(),
            None => self.rows * self.cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index (relative to the block) of `(row, col)`, if stored.
    pub fn local_index(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        match &self.entries {
            None => Some(col * self.rows + row),
            Some(e) => e.binary_search_by_key(&(col, row), |&(r, c)| (c, r)).ok(),
        }
    }

    /// `(row, col)` of every stored entry, in flat order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        match &self.entries {
            Some(e) => e.clone(),
            None => (0..self.cols)
                .flat_map(|c| (0..self.rows).map(move |r| (r, c)))
                .collect(),
        }
    }
}

/// Column-major flattening of a list of (possibly sparse) matrices into one
/// vector of length `len()`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlattenLayout {
    blocks: Vec<Block>,
    len: usize,
}

impl FlattenLayout {
    /// Each item is `(rows, cols, sparsity)`. Sparsity positions must be in
    /// bounds and unique; they are stored sorted column-major.
    pub fn new<I>(items: I) -> Result<Self, SparseError>
    where
        I: IntoIterator<Item = (usize, usize, Option<Vec<(usize, usize)>>)>,
    {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (rows, cols, sparsity) in items {
            let entries = match sparsity {
                None => None,
                Some(mut e) => {
                    for &(r, c) in &e {
                        if r >= rows || c >= cols {
                            return Err(SparseError::IndexOutOfBounds {
                                row: r,
                                col: c,
                                nrows: rows,
                                ncols: cols,
                            });
                        }
                    }
                    e.sort_by_key(|&(r, c)| (c, r));
                    if e.windows(2).any(|w| w[0] == w[1]) {
                        return Err(SparseError::DuplicateEntry);
                    }
                    Some(e)
                }
            };
            let block = Block {
                rows,
                cols,
                offset,
                entries,
            };
            offset += block.len();
            blocks.push(block);
        }
        Ok(FlattenLayout { blocks, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &Block {
        &self.blocks[k]
    }

    /// Global flat index of entry `(row, col)` of block `k`.
    pub fn index(&self, k: usize, row: usize, col: usize) -> Option<usize> {
        let b = self.blocks.get(k)?;
        b.local_index(row, col).map(|i| b.offset + i)
    }

    /// Inverse of [`FlattenLayout::index`].
    pub fn locate(&self, flat: usize) -> Option<(usize, usize, usize)> {
        if flat >= self.len {
            return None;
        }
        let k = self.blocks.partition_point(|b| b.offset + b.len() <= flat);
        let b = &self.blocks[k];
        let local = flat - b.offset;
        let (r, c) = match &b.entries {
            None => (local % b.rows, local / b.rows),
            Some(e) => e[local],
        };
        Some((k, r, c))
    }

    /// Extract the stored entries of block `k` from a dense column-major
    /// matrix. Values outside a sparse pattern must be zero.
    pub fn gather(&self, k: usize, dense_col_major: &[f64]) -> Result<Vec<f64>, SparseError> {
        let b = &self.blocks[k];
        if dense_col_major.len() != b.rows * b.cols {
            return Err(SparseError::DimensionMismatch {
                expected: b.rows * b.cols,
                found: dense_col_major.len(),
            });
        }
        match &b.entries {
            None => Ok(dense_col_major.to_vec()),
            Some(e) => {
                let mut stored = vec![false; b.rows * b.cols];
                let out = e
                    .iter()
                    .map(|&(r, c)| {
                        stored[c * b.rows + r] = true;
                        dense_col_major[c * b.rows + r]
                    })
                    .collect();
                if let Some(pos) = stored
                    .iter()
                    .zip(dense_col_major)
                    .position(|(&s, &v)| !s && v != 0.0)
                {
                    return Err(SparseError::OutsidePattern {
                        row: pos % b.rows,
                        col: pos / b.rows,
                    });
                }
                Ok(out)
            }
        }
    }

    /// Dense column-major matrix of block `k` from its stored entries.
    pub fn scatter(&self, k: usize, stored: &[f64]) -> Vec<f64> {
        let b = &self.blocks[k];
        let mut out = vec![0.0; b.rows * b.cols];
        for (i, (r, c)) in b.positions().into_iter().enumerate() {
            out[c * b.rows + r] = stored[i];
        }
        out
    }
}
