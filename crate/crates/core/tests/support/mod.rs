//! Independent numerical oracles for the integration tests.
//!
//! Nothing here touches the crate's own SVD or closed-form paths: the
//! eigensolver is a classical two-sided Jacobi on symmetric matrices, and
//! the ODE reference is a fixed-step RK4 on the scalar flow. These exist
//! so the library's answers are checked against a second route.

// Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use muonlab_core::linalg::Matrix;

/// Eigenvalues of a symmetric matrix, descending, via two-sided cyclic
/// Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols(), "need a square symmetric matrix");
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p][p];
                let aqq = m[q][q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// Singular values of an arbitrary matrix through the eigenvalues of
/// A^T A (or A A^T, whichever is smaller).
pub fn singular_values_via_gram(a: &Matrix) -> Vec<f64> {
    let gram = if a.rows() >= a.cols() {
        a.matmul_transa(a)
    } else {
        a.matmul_transb(a)
    };
    symmetric_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// Fixed-step RK4 integration of a scalar ODE y' = f(t, y).
pub fn rk4_integrate(f: impl Fn(f64, f64) -> f64, y0: f64, t_end: f64, dt: f64) -> f64 {
    let steps = (t_end / dt).round() as usize;
    let h = t_end / steps.max(1) as f64;
    let mut y = y0;
    let mut t = 0.0;
    for _ in 0..steps {
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
    }
    y
}

pub fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!(
        (got - want).abs() <= tol,
        "{what}: got {got}, want {want} (diff {})",
        (got - want).abs()
    );
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
