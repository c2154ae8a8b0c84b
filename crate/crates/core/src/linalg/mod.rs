//! Numerical kernels shared by the likelihood, prediction and sampler code.

pub mod dense;
pub mod toeplitz;

pub use dense::{symmetric_eigen, DenseCholesky};
pub use toeplitz::{toeplitz_log_density, ToeplitzFactor};

use nalgebra::DMatrix;

/// Pairwise (cascade) summation; the result does not depend on thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `ln Σ exp(x_i)`, stable against overflow. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Replaces `a` by `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `ln 2π`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
