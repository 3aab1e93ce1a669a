//! Minimal CSR matrix: only the products and solves the rest of the crate
//! needs, nothing resembling a general sparse-algebra library.
//!
//! Assembly sums duplicate (row, col) triplets and is order-independent:
//! triplets are sorted by (row, col, value) before accumulation, so any
//! permutation of the same multiset produces bit-identical storage.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Invalid(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| a.2.total_cmp(&b.2)));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut indptr = vec![0usize; rows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices: merged.iter().map(|t| t.1).collect(),
            data: merged.iter().map(|t| t.2).collect(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn iter_row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.data[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(p) => self.data[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[p] * x[self.indices[p]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_transpose dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for p in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[p]] += self.data[p] * xr;
            }
        }
        y
    }

    /// Self * X for row-major dense X of shape (cols, x_cols).
    pub fn matmul_dense(&self, x: &[f64], x_cols: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.cols * x_cols, "matmul_dense shape mismatch");
        let mut y = vec![0.0; self.rows * x_cols];
        for r in 0..self.rows {
            let out = &mut y[r * x_cols..(r + 1) * x_cols];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[p];
                let row = &x[self.indices[p] * x_cols..self.indices[p] * x_cols + x_cols];
                for (o, &xi) in out.iter_mut().zip(row) {
                    *o += a * xi;
                }
            }
        }
        y
    }

    /// Selfᵀ * X for row-major dense X of shape (rows, x_cols).
    pub fn matmul_dense_transpose(&self, x: &[f64], x_cols: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.rows * x_cols, "matmul_dense_transpose shape mismatch");
        let mut y = vec![0.0; self.cols * x_cols];
        for r in 0..self.rows {
            let row = &x[r * x_cols..(r + 1) * x_cols];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[p];
                let out = &mut y[self.indices[p] * x_cols..self.indices[p] * x_cols + x_cols];
                for (o, &xi) in out.iter_mut().zip(row) {
                    *o += a * xi;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[p], r, self.data[p]));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, &triplets)
            .expect("transpose triplets are in range")
    }

    /// Self * Other. Quadratic in row fill; fine for the incidence products
    /// this crate forms, not meant for general use.
    pub fn matmul_sparse(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Invalid(format!(
                "sparse product shape mismatch: {:?} * {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut triplets = Vec::new();
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                let a = self.data[p];
                let mid = self.indices[p];
                for q in other.indptr[mid]..other.indptr[mid + 1] {
                    triplets.push((r, other.indices[q], a * other.data[q]));
                }
            }
        }
        SparseMatrix::from_triplets(self.rows, other.cols, &triplets)
    }

    /// diag(s) * Self.
    pub fn scale_rows(&self, s: &[f64]) -> SparseMatrix {
        assert_eq!(s.len(), self.rows, "scale_rows length mismatch");
        let mut out = self.clone();
        for r in 0..self.rows {
            for p in out.indptr[r]..out.indptr[r + 1] {
                out.data[p] *= s[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                d[r * self.cols + self.indices[p]] = self.data[p];
            }
        }
        d
    }
}
