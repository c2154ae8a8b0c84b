//! Levinson-Durbin factorization of symmetric positive-definite Toeplitz matrices.
//!
//! A stationary kernel sampled on a uniform grid gives a Toeplitz matrix
//! `T[i][j] = c[|i-j|]`. The recursion produces the forward predictors
//! `a^(k)` and prediction-error variances `E_k`, which define the
//! factorization `T⁻¹ = Lᵀ D⁻¹ L` where row `k` of `L` is
//! `[a^(k)_k, …, a^(k)_1, 1, 0, …]` and `D = diag(E_k)`. Everything here is
//! `O(n²)` time.

use crate::error::{Error, Result};

fn fail(n: usize, k: usize, what: &str) -> Error {
    Error::Factorization {
        dim: n,
        diagnostics: format!("Levinson recursion broke down at order {k}: {what}"),
    }
}

/// One order-update of the recursion. `a` holds `a^(k)` on entry (length k)
/// and `a^(k+1)` on exit. Returns the new error variance.
#[inline]
fn levinson_step(col: &[f64], a: &mut Vec<f64>, e: f64, n: usize) -> Result<f64> {
    let k = a.len();
    let mut delta = col[k + 1];
    for i in 0..k {
        // a_{i+1} * c_{k-i}
        delta += a[i] * col[k - i];
    }
    let kappa = -delta / e;
    if !kappa.is_finite() || kappa.abs() >= 1.0 {
        return Err(fail(n, k + 1, &format!("reflection coefficient {kappa:.6e}")));
    }
    let half = k / 2;
    for i in 0..half {
        let lo = a[i];
        let hi = a[k - 1 - i];
        a[i] = lo + kappa * hi;
        a[k - 1 - i] = hi + kappa * lo;
    }
    if k % 2 == 1 {
        a[half] += kappa * a[half];
    }
    a.push(kappa);
    let e_new = e * (1.0 - kappa * kappa);
    if !(e_new > 0.0) || !e_new.is_finite() {
        return Err(fail(n, k + 1, &format!("prediction error variance {e_new:.6e}")));
    }
    Ok(e_new)
}

#[inline]
fn innovation(a: &[f64], r: &[f64], k: usize) -> f64 {
    let mut s = r[k];
    for (i, ai) in a.iter().enumerate() {
        s += ai * r[k - 1 - i];
    }
    s
}

fn check_column(col: &[f64]) -> Result<()> {
    let n = col.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty Toeplitz column".into()));
    }
    if col.iter().any(|v| !v.is_finite()) {
        return Err(fail(n, 0, "non-finite covariance entry"));
    }
    if !(col[0] > 0.0) {
        return Err(fail(n, 0, &format!("non-positive variance {:.6e}", col[0])));
    }
    Ok(())
}

/// Streaming evaluation of `ln|T|` and `rᵀT⁻¹r` for several residual vectors
/// without storing predictors (`O(n)` memory).
pub fn toeplitz_log_density(col: &[f64], residuals: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    check_column(col)?;
    let n = col.len();
    for r in residuals {
        if r.len() != n {
            return Err(Error::InvalidArgument(format!(
                "residual length {} does not match Toeplitz size {n}",
                r.len()
            )));
        }
    }
    let mut a: Vec<f64> = Vec::with_capacity(n);
    let mut e = col[0];
    let mut log_det = e.ln();
    let mut quads: Vec<f64> = residuals.iter().map(|r| r[0] * r[0] / e).collect();
    for k in 1..n {
        e = levinson_step(col, &mut a, e, n)?;
        log_det += e.ln();
        for (q, r) in quads.iter_mut().zip(residuals) {
            let v = innovation(&a, r, k);
            *q += v * v / e;
        }
    }
    Ok((log_det, quads))
}

/// Stored Levinson factorization supporting repeated quadratic forms and solves.
#[derive(Debug, Clone)]
pub struct ToeplitzFactor {
    n: usize,
    /// Predictors `a^(k)` for k = 1..n-1 packed contiguously; `a^(k)` starts at k(k-1)/2.
    predictors: Vec<f64>,
    errors: Vec<f64>,
    log_det: f64,
}

impl ToeplitzFactor {
    pub fn new(col: &[f64]) -> Result<Self> {
        check_column(col)?;
        let n = col.len();
        let mut predictors = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        let mut errors = Vec::with_capacity(n);
        let mut a: Vec<f64> = Vec::with_capacity(n);
        let mut e = col[0];
        errors.push(e);
        for _ in 1..n {
            e = levinson_step(col, &mut a, e, n)?;
            predictors.extend_from_slice(&a);
            errors.push(e);
        }
        let log_det = errors.iter().map(|e| e.ln()).sum();
        Ok(Self {
            n,
            predictors,
            errors,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn predictor(&self, k: usize) -> &[f64] {
        let start = k * (k - 1) / 2;
        &self.predictors[start..start + k]
    }

    /// Innovations `L r`.
    fn innovations(&self, r: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        out.push(r[0]);
        for k in 1..self.n {
            out.push(innovation(self.predictor(k), r, k));
        }
        out
    }

    /// `rᵀ T⁻¹ r`.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        assert_eq!(r.len(), self.n, "residual length mismatch");
        self.innovations(r)
            .iter()
            .zip(&self.errors)
            .map(|(v, e)| v * v / e)
            .sum()
    }

    /// `T⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        let mut g: Vec<f64> = self
            .innovations(b)
            .iter()
            .zip(&self.errors)
            .map(|(v, e)| v / e)
            .collect();
        // x = Lᵀ g, accumulated in place from the top row of Lᵀ downward:
        // x_j = g_j + Σ_{k>j} a^(k)_{k-j} g_k. Row k touches only j < k, so
        // iterating k upward and adding into entries below k is safe.
        for k in 1..self.n {
            let gk = g[k];
            if gk == 0.0 {
                continue;
            }
            let a = self.predictor(k);
            for (i, ai) in a.iter().enumerate() {
                g[k - 1 - i] += ai * gk;
            }
        }
        g
    }
}
