//! Plain rank-2 tensor values (no gradient tracking).
//!
//! Everything this crate manipulates is a matrix — feature maps are N×D,
//! slot sets K×D, attention N×K, vectors 1×C — so tensors are fixed at rank
//! two with row-major storage. Differentiable computation wraps these values
//! in tape [`Var`](crate::tape::Var)s; parameters, codebook prototypes and
//! anything explicitly detached stay as plain `Tensor`s.

use crate::{CoreError, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::shape(
                "tensor",
                format!("zero-sized dimensions {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(CoreError::shape(
                "tensor",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::shape("tensor", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::from_vec(r, c, data)
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts a subset of rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(CoreError::invalid(
                    "select_rows",
                    format!("row {i} out of {}", self.rows),
                ));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_vec(indices.len(), self.cols, data)
    }

    /// Squared Euclidean distance between a row of `self` and a row of `other`.
    pub fn row_sq_dist(&self, i: usize, other: &Tensor<T>, j: usize) -> T {
        self.row(i)
            .iter()
            .zip(other.row(j))
            .fold(T::zero(), |acc, (&a, &b)| {
                let d = a - b;
                acc + d * d
            })
    }
}

/// Cosine distance `1 - cos(a, b)` with zero vectors treated as orthogonal to
/// everything (distance 1).
pub fn cosine_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let mut dot = T::zero();
    let mut na = T::zero();
    let mut nb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == T::zero() || nb == T::zero() {
        return T::one();
    }
    T::one() - dot / (na.sqrt() * nb.sqrt())
}
