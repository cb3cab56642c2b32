use crate::complex::IncidenceMatrix;
use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Scalar};

use super::Tensor;

/// Constant CSR matrix used for incidence aggregation.
///
/// Products are summed with [`ordered_sum`], so the result of `M · X` does not
/// depend on how the nonzeros of a row happen to be enumerated.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<S> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<S>,
}

impl<S: Scalar> SparseMatrix<S> {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, S)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::shape("SparseMatrix", format!("entry ({i}, {j}) outside {rows}×{cols}")));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        for &(i, _, _) in &sorted {
            row_ptr[i + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: sorted.iter().map(|t| t.1).collect(),
            vals: sorted.iter().map(|t| t.2).collect(),
        })
    }

    /// The 0/1 matrix of an incidence relation.
    pub fn from_incidence(b: &IncidenceMatrix) -> Self {
        let trip: Vec<_> = b.entries().into_iter().map(|(i, j)| (i, j, S::one())).collect();
        Self::from_triplets(b.rows(), b.cols(), &trip).expect("incidence entries are in range")
    }

    /// Row-normalized version: each nonempty row sums to one.
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut row: Vec<S> = self.vals[lo..hi].to_vec();
            let total = ordered_sum(&mut row);
            if total != S::zero() {
                for v in &mut out.vals[lo..hi] {
                    *v /= total;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.cols, self.rows, &trip).expect("transpose stays in range")
    }

    pub fn triplets(&self) -> Vec<(usize, usize, S)> {
        let mut out = Vec::with_capacity(self.vals.len());
        for i in 0..self.rows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.push((i, self.col_idx[p], self.vals[p]));
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// `self · x` for a dense `x` with `self.cols()` rows.
    pub fn matmul(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() != 2 || x.rows() != self.cols {
            return Err(Error::shape(
                "spmm",
                format!("{}×{} sparse times {:?}", self.rows, self.cols, x.shape()),
            ));
        }
        let d = x.cols();
        let mut out = vec![S::zero(); self.rows * d];
        let mut buf = Vec::new();
        for i in 0..self.rows {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            if lo == hi {
                continue;
            }
            for j in 0..d {
                buf.clear();
                buf.extend((lo..hi).map(|p| self.vals[p] * x.data()[self.col_idx[p] * d + j]));
                out[i * d + j] = ordered_sum(&mut buf);
            }
        }
        Tensor::matrix(self.rows, d, out)
    }
}
