use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row must be distinct.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut row = row.clone();
            row.sort_unstable_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Shape(format!("duplicate column {} in row {r}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::Shape(format!("column {c} outside {cols} columns")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: ArrayView2<f64>) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = dense
            .outer_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_rows(dense.ncols(), &rows).expect("dense rows are well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_indices(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// `self · x`.
    pub fn dot(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, x.nrows(), "sparse product shape mismatch");
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for r in 0..self.rows {
            let mut target = out.row_mut(r);
            for (c, v) in self.row(r) {
                target.scaled_add(v, &x.row(c));
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn t_dot(&self, g: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, g.nrows(), "sparse product shape mismatch");
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for r in 0..self.rows {
            let source = g.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &source);
            }
        }
        out
    }

    /// Prepends one column holding `column[r]` in row `r` (zeros are not stored).
    pub fn with_leading_column(&self, column: &[f64]) -> Self {
        assert_eq!(column.len(), self.rows);
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + self.rows);
        let mut values = Vec::with_capacity(self.nnz() + self.rows);
        indptr.push(0);
        for r in 0..self.rows {
            if column[r] != 0.0 {
                indices.push(0);
                values.push(column[r]);
            }
            for (c, v) in self.row(r) {
                indices.push(c + 1);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols + 1,
            indptr,
            indices,
            values,
        }
    }

    /// Same rows in a space of `cols` columns (extra columns are empty).
    pub fn widened(mut self, cols: usize) -> Self {
        assert!(cols >= self.cols);
        self.cols = cols;
        self
    }
}
