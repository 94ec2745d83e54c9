//! Compact singular value decomposition via one-sided Jacobi.
//!
//! One-sided Jacobi applies plane rotations to the columns of the working
//! matrix until all column pairs are mutually orthogonal. The rotation
//! order is a fixed cyclic sweep, so the decomposition is deterministic
//! for a given input. At the sizes this crate cares about (<= a few
//! hundred rows/cols) it is fast, and its singular values are accurate to
//! high relative precision.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Relative cutoff below which singular values are treated as zero.
pub const DEFAULT_RANK_CUTOFF: f64 = 1e-12;

/// Convergence tolerance on the normalized off-diagonal mass.
const JACOBI_TOL: f64 = 1e-12;

/// Sweep budget before giving up.
const MAX_SWEEPS: usize = 100;

/// Compact SVD: `u * diag(s) * vt` reconstructs the input, `s` holds only
/// the retained (strictly positive) singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x r, orthonormal columns.
    pub u: Matrix,
    /// Retained singular values, descending.
    pub s: Vec<f64>,
    /// r x n, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s) * vt`.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.u.rows();
        let n = self.vt.cols();
        let mut out = Matrix::zeros(m, n);
        for k in 0..self.s.len() {
            let sk = self.s[k];
            for i in 0..m {
                let uik = self.u.get(i, k) * sk;
                if uik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let v = out.get(i, j) + uik * self.vt.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }
}

/// Compact SVD with a relative rank cutoff.
///
/// Singular values `<= rank_cutoff * s_max` are dropped; a cutoff of zero
/// still discards values at machine-precision level relative to `s_max`.
/// Sign convention: the first nonzero entry of each column of `u` is
/// non-negative.
pub fn svd_compact(a: &Matrix, rank_cutoff: f64) -> Result<SvdResult> {
    a.check_finite()?;
    if rank_cutoff < 0.0 {
        return Err(Error::invalid("rank_cutoff must be non-negative"));
    }
    if a.rows() >= a.cols() {
        svd_tall(a, rank_cutoff)
    } else {
        // Work on the transpose and swap the factors back.
        let r = svd_tall(&a.transpose(), rank_cutoff)?;
        let mut out = SvdResult {
            u: r.vt.transpose(),
            s: r.s,
            vt: r.u.transpose(),
        };
        apply_sign_convention(&mut out);
        Ok(out)
    }
}

fn svd_tall(a: &Matrix, rank_cutoff: f64) -> Result<SvdResult> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    // Columns of `w` converge to u_k * s_k; `v` accumulates the rotations.
    let mut w = a.clone();
    let mut v = Matrix::identity(n);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if n >= 2 {
            converged = true;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let (app, aqq, apq) = column_grams(&w, p, q);
                    if apq * apq <= JACOBI_TOL * JACOBI_TOL * app * aqq {
                        continue;
                    }
                    converged = false;
                    // Jacobi rotation diagonalizing [[app, apq], [apq, aqq]].
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    rotate_columns(&mut w, p, q, c, s);
                    rotate_columns(&mut v, p, q, c, s);
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(format!(
            "jacobi svd did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    // Column norms are the singular values; sort descending with a stable
    // order so ties keep their sweep position.
    let mut norms: Vec<(usize, f64)> = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..m {
                let x = w.get(i, j);
                acc += x * x;
            }
            (j, acc.sqrt())
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let s_max = norms.first().map(|t| t.1).unwrap_or(0.0);
    let machine_floor = f64::EPSILON * (m.max(n) as f64);
    let threshold = s_max * rank_cutoff.max(machine_floor);
    let kept: Vec<(usize, f64)> = norms.into_iter().filter(|&(_, s)| s > threshold).collect();
    let r = kept.len();

    let mut u = Matrix::zeros(m, r);
    let mut vt = Matrix::zeros(r, n);
    let mut s = Vec::with_capacity(r);
    for (k, &(j, sj)) in kept.iter().enumerate() {
        s.push(sj);
        for i in 0..m {
            u.set(i, k, w.get(i, j) / sj);
        }
        for i in 0..n {
            vt.set(k, i, v.get(i, j));
        }
    }

    let mut out = SvdResult { u, s, vt };
    apply_sign_convention(&mut out);
    Ok(out)
}

fn column_grams(w: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
    let n = w.cols();
    for i in 0..w.rows() {
        let xp = w.data()[i * n + p];
        let xq = w.data()[i * n + q];
        app += xp * xp;
        aqq += xq * xq;
        apq += xp * xq;
    }
    (app, aqq, apq)
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.cols();
    let data = m.data_mut();
    for i in 0..data.len() / n {
        let xp = data[i * n + p];
        let xq = data[i * n + q];
        data[i * n + p] = c * xp - s * xq;
        data[i * n + q] = s * xp + c * xq;
    }
}

/// Flip factor pairs so the first nonzero entry of each `u` column is
/// non-negative.
fn apply_sign_convention(svd: &mut SvdResult) {
    let m = svd.u.rows();
    let n = svd.vt.cols();
    for k in 0..svd.s.len() {
        let mut sign = 0.0;
        for i in 0..m {
            let x = svd.u.get(i, k);
            if x != 0.0 {
                sign = x.signum();
                break;
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                let x = svd.u.get(i, k);
                svd.u.set(i, k, -x);
            }
            for j in 0..n {
                let x = svd.vt.get(k, j);
                svd.vt.set(k, j, -x);
            }
        }
    }
}
