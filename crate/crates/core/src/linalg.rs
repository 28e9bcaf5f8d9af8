//! Thin helpers over `faer` shared by the physics modules: Hermitian
//! eigendecompositions, small matrix utilities and a compressed-row sparse
//! matrix used for superoperators.

use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("eigendecomposition did not converge")]
    EigenNotConverged,
    #[error("singular value decomposition did not converge")]
    SvdNotConverged,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
///
/// Only the lower triangle is read.
pub fn hermitian_eigen(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>), LinalgError> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::EigenNotConverged)?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn hermitian_eigenvalues(a: MatRef<'_, C64>) -> Result<Vec<f64>, LinalgError> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| LinalgError::EigenNotConverged)
}

pub fn singular_values(a: MatRef<'_, C64>) -> Result<Vec<f64>, LinalgError> {
    a.singular_values().map_err(|_| LinalgError::SvdNotConverged)
}

/// `(A + A†) / 2`.
pub fn hermitian_part(a: MatRef<'_, C64>) -> Mat<C64> {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Largest entrywise modulus of `A - A†`.
pub fn hermiticity_defect(a: MatRef<'_, C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in j..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(a: MatRef<'_, C64>) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn frobenius(a: MatRef<'_, C64>) -> f64 {
    a.norm_l2()
}

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds the matrix from unsorted triplets, summing duplicates and
    /// dropping exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<C64> = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            debug_assert!(r < nrows && c < ncols);
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_idx.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        // drop entries that cancelled
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != ZERO {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A† x`.
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![ZERO; self.ncols];
        for (r, xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k].conj() * xr;
            }
        }
        y
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Converts to a `faer` column-major sparse matrix, optionally shifting
    /// the diagonal by `-shift` and replacing row `replace.0` with the dense
    /// row `replace.1` (given as `(col, value)` pairs).
    pub(crate) fn to_faer(
        &self,
        shift: C64,
        replace: Option<(usize, &[(usize, C64)])>,
    ) -> Result<SparseColMat<usize, C64>, LinalgError> {
        let mut trips: Vec<Triplet<usize, usize, C64>> = Vec::with_capacity(self.nnz() + self.nrows);
        let replaced_row = replace.map(|(r, _)| r);
        for r in 0..self.nrows {
            if Some(r) == replaced_row {
                continue;
            }
            let mut has_diag = false;
            for (c, v) in self.row(r) {
                let v = if c == r {
                    has_diag = true;
                    v - shift
                } else {
                    v
                };
                trips.push(Triplet::new(r, c, v));
            }
            if !has_diag && shift != ZERO && r < self.ncols {
                trips.push(Triplet::new(r, r, -shift));
            }
        }
        if let Some((r, entries)) = replace {
            for &(c, v) in entries {
                trips.push(Triplet::new(r, c, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_sums_duplicates_and_multiplies() {
        let a = CsrMatrix::from_triplets(
            2,
            2,
            vec![
                (0, 0, C64::new(1.0, 0.0)),
                (1, 0, C64::new(0.0, 2.0)),
                (0, 0, C64::new(1.0, 0.0)),
                (0, 1, C64::new(3.0, 0.0)),
                (1, 1, C64::new(1.0, 0.0)),
                (1, 1, C64::new(-1.0, 0.0)),
            ],
        );
        assert_eq!(a.nnz(), 3);
        let y = a.matvec(&[ONE, C64::new(0.0, 1.0)]);
        assert_eq!(y[0], C64::new(2.0, 3.0));
        assert_eq!(y[1], C64::new(0.0, 2.0));
        let dense = a.to_dense();
        assert_eq!(dense[(0, 0)], C64::new(2.0, 0.0));
        assert_eq!(dense[(1, 1)], ZERO);
        let z = a.adjoint_matvec(&[ONE, ONE]);
        assert_eq!(z[0], C64::new(2.0, -2.0));
        assert_eq!(z[1], C64::new(3.0, 0.0));
    }

    #[test]
    fn hermitian_helpers() {
        let a = Mat::from_fn(3, 3, |i, j| C64::new((i + j) as f64, i as f64 - j as f64));
        assert!(hermiticity_defect(a.as_ref()) < 1e-15);
        let (vals, vecs) = hermitian_eigen(a.as_ref()).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let recon = &vecs * Mat::from_fn(3, 3, |i, j| if i == j { C64::new(vals[i], 0.0) } else { ZERO }) * vecs.adjoint();
        assert!(frobenius((&recon - &a).as_ref()) < 1e-12);
        assert!((trace(a.as_ref()).re - 6.0).abs() < 1e-15);
    }
}
