//! Orthogonalization: set every retained singular value of a matrix to 1.
//!
//! Two routes are provided. The exact route goes through the compact SVD
//! and returns `u * vt`. The Newton-Schulz route iterates an odd quintic
//! polynomial in the matrix, which approximates the same map using only
//! matrix products; this is the kernel Muon uses in practice.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, svd_compact, Matrix};

/// Quintic iteration coefficients (a, b, c) for `X <- aX + b(XX^T)X + c(XX^T)^2 X`.
///
/// These are the de-facto standard coefficients for Muon's five-step
/// schedule. They are tuned for rapid inflation of small singular values
/// rather than asymptotic convergence, so the iteration lands singular
/// values in a band around 1 instead of driving them to 1 exactly.
pub const NS_COEFFICIENTS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Exact orthogonalization via compact SVD: returns `u * vt`.
///
/// The zero matrix maps to the zero matrix (its compact SVD is empty).
pub fn orthogonalize_exact(g: &Matrix, rank_cutoff: f64) -> Result<Matrix> {
    let svd = svd_compact(g, rank_cutoff)?;
    Ok(svd.u.matmul(&svd.vt))
}

/// Newton-Schulz orthogonalization with the standard coefficients.
pub fn newton_schulz_orthogonalize(g: &Matrix, iterations: usize) -> Result<Matrix> {
    newton_schulz_orthogonalize_with(g, iterations, NS_COEFFICIENTS)
}

/// Newton-Schulz orthogonalization with caller-supplied coefficients.
///
/// The input is normalized by its Frobenius norm so all singular values
/// start in (0, 1], then `iterations` quintic steps are applied. Errors on
/// a zero matrix (the normalization is undefined; the polynomial has no
/// constant term so zero stays zero anyway) and on non-finite
/// intermediates.
pub fn newton_schulz_orthogonalize_with(
    g: &Matrix,
    iterations: usize,
    coefficients: (f64, f64, f64),
) -> Result<Matrix> {
    g.check_finite()?;
    if iterations == 0 {
        return Err(Error::invalid("iterations must be positive"));
    }
    let norm = frobenius_norm(g);
    if norm == 0.0 {
        return Err(Error::invalid(
            "newton-schulz orthogonalization of a zero matrix",
        ));
    }

    // Working on the orientation with rows <= cols keeps the Gram matrix
    // X X^T as small as possible.
    let transposed = g.rows() > g.cols();
    let mut x = if transposed {
        g.transpose().scale(1.0 / norm)
    } else {
        g.scale(1.0 / norm)
    };

    let (a, b, c) = coefficients;
    for _ in 0..iterations {
        let gram = x.matmul_transb(&x); // X X^T
        let gram2 = gram.matmul(&gram);
        // X <- aX + (b*G + c*G^2) X
        let mut poly = gram.scale(b);
        poly.add_scaled(c, &gram2);
        let mut next = poly.matmul(&x);
        next.add_scaled(a, &x);
        if next.check_finite().is_err() {
            return Err(Error::numerical(
                "newton-schulz iteration produced non-finite values",
            ));
        }
        x = next;
    }

    Ok(if transposed { x.transpose() } else { x })
}
