use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-compressed matrix holding only nonzero entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Density at or below which dense products switch to the sparse kernel.
    pub const SPARSE_DENSITY: f64 = 0.1;

    pub fn from_dense(a: &Array2<T>) -> Self {
        let mut indptr = Vec::with_capacity(a.nrows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in a.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            cols: a.ncols(),
            indptr,
            indices,
            values,
        }
    }

    /// Compressed copy of `a` if its density is at most [`Self::SPARSE_DENSITY`].
    pub fn detect(a: &Array2<T>) -> Option<Self> {
        let nnz = a.iter().filter(|&&v| v != T::zero()).count();
        if a.is_empty() || nnz as f64 > Self::SPARSE_DENSITY * a.len() as f64 {
            return None;
        }
        Some(Self::from_dense(a))
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.rows(), self.cols));
        for i in 0..self.rows() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out[[i, self.indices[k]]] = self.values[k];
            }
        }
        out
    }

    /// `self · b`.
    pub fn dot(&self, b: &Array2<T>) -> Result<Array2<T>> {
        if b.nrows() != self.cols {
            return Err(Error::shape(
                "sparse_matmul",
                format!("{}x{} · {}x{}", self.rows(), self.cols, b.nrows(), b.ncols()),
            ));
        }
        let mut out = Array2::zeros((self.rows(), b.ncols()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                row.scaled_add(self.values[k], &b.row(self.indices[k]));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub(crate) fn t_dot(&self, g: &Array2<T>) -> Array2<T> {
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for i in 0..self.rows() {
            let gi = g.row(i);
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.row_mut(self.indices[k]).scaled_add(self.values[k], &gi);
            }
        }
        out
    }

    /// Inverted dropout over the stored entries, drawn in row-major order.
    ///
    /// Consumes the same draws, and keeps the same entries, as
    /// [`Tape::dropout`](super::Tape::dropout) on the dense equivalent.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Self {
        let keep = T::of(1.0 / (1.0 - p));
        let mut indptr = Vec::with_capacity(self.indptr.len());
        let mut indices = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        indptr.push(0);
        for i in 0..self.rows() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if rng.random::<f64>() >= p {
                    indices.push(self.indices[k]);
                    values.push(self.values[k] * keep);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }
}
