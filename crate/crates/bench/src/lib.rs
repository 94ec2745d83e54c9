//! Shared helpers for the kernel benchmarks.

use muonlab_core::datagen::Rng;
use muonlab_core::linalg::Matrix;

/// Deterministic Gaussian matrix for benchmarking.
pub fn bench_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    Rng::new(seed).normal_matrix(rows, cols, 1.0)
}
