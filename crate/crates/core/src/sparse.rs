//! Compressed sparse row storage with a shared, value-independent pattern.

use std::sync::Arc;

use crate::ad::{Dual, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrPattern {
    pub size: usize,
    pub row_offsets: Vec<usize>,
    pub columns: Vec<usize>,
}

impl CsrPattern {
    /// Builds a pattern from per-row column lists (duplicates allowed).
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let size = rows.len();
        let mut row_offsets = Vec::with_capacity(size + 1);
        let mut columns = Vec::new();
        row_offsets.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            columns.extend_from_slice(row);
            row_offsets.push(columns.len());
        }
        Self {
            size,
            row_offsets,
            columns,
        }
    }

    pub fn nnz(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Storage slot of entry `(i, j)`, if structurally present.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let range = self.row(i);
        self.columns[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| range.start + k)
    }
}

#[derive(Clone, Debug)]
pub struct SparseMatrix<T> {
    pub pattern: Arc<CsrPattern>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn size(&self) -> usize {
        self.pattern.size
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.pattern
            .slot(i, j)
            .map_or_else(T::zero, |s| self.values[s])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.size()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec<X>(&self, x: &[X]) -> Vec<T>
    where
        X: Copy,
        T: std::ops::Mul<X, Output = T>,
    {
        let mut y = Vec::with_capacity(self.size());
        for i in 0..self.size() {
            let mut acc = T::zero();
            for s in self.pattern.row(i) {
                acc += self.values[s] * x[self.pattern.columns[s]];
            }
            y.push(acc);
        }
        y
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> SparseMatrix<U> {
        SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Row-major dense copy; intended for small matrices and test oracles.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.size();
        let mut dense = vec![vec![T::zero(); n]; n];
        for (i, row) in dense.iter_mut().enumerate() {
            for s in self.pattern.row(i) {
                row[self.pattern.columns[s]] = self.values[s];
            }
        }
        dense
    }
}

impl<const N: usize> SparseMatrix<Dual<N>> {
    pub fn value_part(&self) -> SparseMatrix<f64> {
        self.map(|d| d.value)
    }

    /// The matrix of `p`-th tangent components, i.e. `∂A/∂w_p`.
    pub fn tangent_part(&self, p: usize) -> SparseMatrix<f64> {
        self.map(|d| d.tangent[p])
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
