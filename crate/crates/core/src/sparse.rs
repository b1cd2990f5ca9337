//! Compressed sparse row matrices for edge-list propagation.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; explicit zeros are kept.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Dimension {
                    op: "sparse_from_triplets",
                    lhs: (rows, cols),
                    rhs: (r, c),
                });
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of row `r` as `(col, value)`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// `self · z`.
    pub fn matmul_dense(&self, z: &Matrix) -> Result<Matrix> {
        if self.cols != z.rows() {
            return Err(Error::Dimension {
                op: "spmm",
                lhs: self.shape(),
                rhs: z.shape(),
            });
        }
        let d = z.cols();
        let mut out = Matrix::zeros(self.rows, d);
        for r in 0..self.rows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let out_row = out.row_mut(r);
            for (&c, &v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                for (o, &x) in out_row.iter_mut().zip(z.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub fn transpose_matmul_dense(&self, g: &Matrix) -> Result<Matrix> {
        if self.rows != g.rows() {
            return Err(Error::Dimension {
                op: "spmm_transpose",
                lhs: self.shape(),
                rhs: g.shape(),
            });
        }
        let d = g.cols();
        let mut out = Matrix::zeros(self.cols, d);
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row_entries(r) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(g_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Row sums of absolute values.
    pub fn abs_row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row_entries(r).map(|(_, v)| v.abs()).sum())
            .collect()
    }

    /// `self - other` as a new sparse matrix.
    pub fn sub(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op: "sparse_sub",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            triplets.extend(self.row_entries(r).map(|(c, v)| (r, c, v)));
            triplets.extend(other.row_entries(r).map(|(c, v)| (r, c, -v)));
        }
        SparseMatrix::from_triplets(self.rows, self.cols, &triplets)
    }
}
