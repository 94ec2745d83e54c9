//! Dense small-matrix linear algebra.
//!
//! Everything in the crate runs on one concrete type: a row-major `f64`
//! matrix. The sizes of interest are tiny by numerical-library standards
//! (a few hundred rows at most), so the kernels favor determinism and
//! clarity over blocking or parallelism. SVD is a fixed-order one-sided
//! Jacobi, which makes every decomposition reproducible bit-for-bit for a
//! given input.

mod ortho;
mod svd;

pub use ortho::{
    newton_schulz_orthogonalize, newton_schulz_orthogonalize_with, orthogonalize_exact,
    NS_COEFFICIENTS,
};
pub use svd::{svd_compact, SvdResult, DEFAULT_RANK_CUTOFF};

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit reals.
///
/// Zero-sized dimensions are permitted so that rank-0 factors (e.g. the SVD
/// of a zero matrix) are representable; constructors that ingest user data
/// reject empty shapes and non-finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square matrix with `d` on the diagonal.
    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = d[i];
        }
        m
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Build from row-major data, validating shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    /// Build from nested rows, validating shape and finiteness.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("matrix contains non-finite entries"))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimensions {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        // ikj loop order keeps the inner loop contiguous in both operands.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * otherᵀ`.
    pub fn matmul_transb(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transb inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += arow[k] * brow[k];
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn matmul_transa(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_transa inner dimensions");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimensions");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for k in 0..self.cols {
                acc += row[k] * x[k];
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &Matrix) {
        assert!(self.same_shape(other), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// In-place `self = mu * self + other`.
    pub fn decay_accumulate(&mut self, mu: f64, other: &Matrix) {
        assert!(self.same_shape(other), "decay_accumulate shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = mu * *a + b;
        }
    }

    /// Frobenius inner product ⟨self, other⟩.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert!(self.same_shape(other), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:>12.5e} ", self.get(i, j))?;
            }
            writeln!(f, "{}", if self.cols > 8 { "..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Largest singular value.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    let svd = svd_compact(a, 0.0)?;
    Ok(svd.s.first().copied().unwrap_or(0.0))
}

/// Euclidean norm of the flattened entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    let svd = svd_compact(a, 0.0)?;
    Ok(svd.s.iter().sum())
}

/// Spectral diagnostics: how many directions carry significant mass.
///
/// Returns `(threshold_rank, entropy_rank)` where `threshold_rank` counts
/// singular values `>= threshold_ratio * sigma_max` and `entropy_rank` is
/// `exp(-sum p_i ln p_i)` for the normalized spectrum `p_i = s_i / sum(s)`.
pub fn effective_rank(a: &Matrix, threshold_ratio: f64) -> Result<(usize, f64)> {
    if a.is_zero() {
        return Err(Error::invalid("effective_rank of a zero matrix"));
    }
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return Err(Error::invalid("threshold_ratio must lie in (0, 1)"));
    }
    let svd = svd_compact(a, 0.0)?;
    let s_max = svd.s[0];
    let threshold_rank = svd
        .s
        .iter()
        .filter(|&&s| s >= threshold_ratio * s_max)
        .count();
    let total: f64 = svd.s.iter().sum();
    let entropy: f64 = svd
        .s
        .iter()
        .map(|&s| {
            let p = s / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    Ok((threshold_rank, entropy.exp()))
}

/// Serialize in the plain-text exchange format: first line `rows cols`,
/// then one whitespace-separated row per line with 17 significant digits.
pub fn matrix_to_text(a: &Matrix) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", a.rows, a.cols));
    for i in 0..a.rows {
        let row: Vec<String> = a.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parse the plain-text matrix format produced by [`matrix_to_text`].
pub fn matrix_from_text(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty matrix file"))?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::invalid("bad matrix header"))?;
    let cols: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::invalid("bad matrix header"))?;
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::invalid(format!("bad matrix entry {tok:?}")))?;
            data.push(v);
        }
    }
    Matrix::from_vec(rows, cols, data)
}
