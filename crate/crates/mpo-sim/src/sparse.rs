//! Sparse complex matrices on the truncated total space.
//!
//! Operators are stored in CSR form with entries sorted by (row, col) and no
//! explicit zeros, so serialized dumps are byte-stable. All matrices are
//! immutable after construction and safe to share across threads.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::fmt::Write as _;

use crate::par;

/// Mismatched operand dimensions in sparse algebra.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("operator dimension mismatch: {left} vs {right}")]
pub struct DimMismatch {
    pub left: usize,
    pub right: usize,
}

/// Immutable sparse complex matrix (CSR, sorted columns within each row).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl OperatorMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed and exact
    /// zeros dropped.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, Complex64)> = triplets
            .into_iter()
            .inspect(|&(r, c, _)| {
                assert!(r < dim && c < dim, "triplet ({r},{c}) out of range for dim {dim}")
            })
            .collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, Complex64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != Complex64::ZERO);

        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let (cols, vals) = merged.into_iter().map(|(_, c, v)| (c, v)).unzip();
        Self { dim, row_ptr, cols, vals }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal((0..dim).map(|_| Complex64::ONE).collect())
    }

    pub fn from_diagonal(diag: Vec<Complex64>) -> Self {
        let dim = diag.len();
        Self::from_triplets(dim, diag.into_iter().enumerate().map(|(i, v)| (i, i, v)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries in (row, col) order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    fn row(&self, r: usize) -> (&[usize], &[Complex64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    fn check_dim(&self, other: &Self) -> Result<(), DimMismatch> {
        if self.dim == other.dim {
            Ok(())
        } else {
            Err(DimMismatch { left: self.dim, right: other.dim })
        }
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        if factor == Complex64::ZERO {
            return Self::zeros(self.dim);
        }
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= factor;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.check_dim(other)?;
        Ok(Self::from_triplets(
            self.dim,
            self.entries().chain(other.entries()),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.add(&other.scale(-Complex64::ONE))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.entries().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.check_dim(other)?;
        let mut acc = vec![Complex64::ZERO; self.dim];
        let mut touched: Vec<usize> = Vec::new();
        let mut triplets: Vec<(usize, usize, Complex64)> = Vec::new();
        for r in 0..self.dim {
            let (cols_a, vals_a) = self.row(r);
            for (&k, &va) in cols_a.iter().zip(vals_a) {
                let (cols_b, vals_b) = other.row(k);
                for (&c, &vb) in cols_b.iter().zip(vals_b) {
                    if acc[c] == Complex64::ZERO {
                        touched.push(c);
                    }
                    acc[c] += va * vb;
                }
            }
            for &c in &touched {
                triplets.push((r, c, acc[c]));
                acc[c] = Complex64::ZERO;
            }
            touched.clear();
        }
        Ok(Self::from_triplets(self.dim, triplets))
    }

    /// AB - BA.
    pub fn commutator(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    /// Largest entry magnitude (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Complex64 {
        self.entries()
            .filter(|&(r, c, _)| r == c)
            .map(|(_, _, v)| v)
            .sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        match self.sub(&self.adjoint()) {
            Ok(diff) => diff.max_abs() <= tol,
            Err(_) => false,
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(v.len(), self.dim);
        let vs = v.as_slice();
        DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &a)| a * vs[c]).sum()
            }),
        )
    }

    /// Squared norm of the image, `|| self * v ||^2`.
    pub fn apply_norm_sq(&self, v: &DVector<Complex64>) -> f64 {
        let vs = v.as_slice();
        (0..self.dim)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let x: Complex64 = cols.iter().zip(vals).map(|(&c, &a)| a * vs[c]).sum();
                x.norm_sqr()
            })
            .sum()
    }

    /// Dense product `self * X`, column-parallel.
    pub fn mul_dense(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        assert_eq!(x.nrows(), self.dim);
        let d = self.dim;
        let mut out = DMatrix::zeros(d, x.ncols());
        let xs = x.as_slice();
        par::for_each_chunk(out.as_mut_slice(), d, |j, out_col| {
            let x_col = &xs[j * d..(j + 1) * d];
            for r in 0..d {
                let (cols, vals) = self.row(r);
                out_col[r] = cols.iter().zip(vals).map(|(&c, &a)| a * x_col[c]).sum();
            }
        });
        out
    }

    /// Dense product `X * self†`, column-parallel. Column j of the result only
    /// needs row j of `self`, which keeps the access pattern CSR-friendly.
    pub fn mul_dense_adjoint_from_right(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        assert_eq!(x.ncols(), self.dim);
        let d = self.dim;
        let nrows = x.nrows();
        let mut out = DMatrix::zeros(nrows, d);
        let xs = x.as_slice();
        par::for_each_chunk(out.as_mut_slice(), nrows, |j, out_col| {
            let (cols, vals) = self.row(j);
            for (&k, &a) in cols.iter().zip(vals) {
                let ac = a.conj();
                let x_col = &xs[k * nrows..(k + 1) * nrows];
                for (o, &xv) in out_col.iter_mut().zip(x_col) {
                    *o += ac * xv;
                }
            }
        });
        out
    }

    /// Restriction P A P† to a sorted index subset: entry (r, c) survives iff
    /// both indices are kept, and is re-addressed by its position in `keep`.
    pub fn restrict(&self, keep: &[usize]) -> OperatorMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut new_index = vec![usize::MAX; self.dim];
        for (pos, &i) in keep.iter().enumerate() {
            new_index[i] = pos;
        }
        let triplets: Vec<(usize, usize, Complex64)> = self
            .entries()
            .filter_map(|(r, c, v)| {
                let (nr, nc) = (new_index[r], new_index[c]);
                (nr != usize::MAX && nc != usize::MAX).then_some((nr, nc, v))
            })
            .collect();
        Self::from_triplets(keep.len(), triplets)
    }

    /// Serialize in the operator dump format: header `dim D`, then one sorted
    /// line `row col re im` per entry.
    pub fn dump(&self) -> String {
        let mut s = format!("dim {}\n", self.dim);
        for (r, c, v) in self.entries() {
            writeln!(s, "{} {} {:e} {:e}", r, c, v.re, v.im).unwrap();
        }
        s
    }
}
