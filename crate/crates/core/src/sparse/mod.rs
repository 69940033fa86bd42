//! Compressed-sparse-column storage, column-major flattening and the
//! mat-vec kernels shared by the canonicalizer, the solver and the code
//! generator.

mod csc;
mod layout;

pub use csc::{sym_upper_spmv, CscMatrix};
pub use layout::{Block, FlattenLayout};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry ({row}, {col}) out of bounds for {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("column {col} out of range (ncols = {ncols})")]
    ColumnOutOfRange { col: usize, ncols: usize },
    #[error("column selection must be sorted and duplicate-free")]
    UnsortedColumns,
    #[error("duplicate sparsity position")]
    DuplicateEntry,
    #[error("nonzero value at ({row}, {col}) outside the declared sparsity pattern")]
    OutsidePattern { row: usize, col: usize },
    #[error("invalid CSC structure: {0}")]
    InvalidStructure(String),
}
