//! Dense symmetric factorizations backed by faer.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatMut, MatRef, Par, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added once when a factorization fails.
pub const JITTER_FACTOR: f64 = 1e-10;

fn to_faer(a: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

fn as_faer_mut(a: &mut DMatrix<f64>) -> MatMut<'_, f64> {
    let (r, c) = a.shape();
    MatMut::from_column_major_slice_mut(a.as_mut_slice(), r, c)
}

/// Cholesky factor `K = L Lᵀ` with the one-shot jitter policy.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    l: Mat<f64>,
    log_det: f64,
    jitter: f64,
}

impl DenseCholesky {
    /// Factorizes a symmetric matrix (lower triangle is read). On failure adds
    /// `1e-10 · mean(diag) · I` and retries once.
    pub fn factor(k: &DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        if n != k.ncols() {
            return Err(Error::InvalidArgument(format!(
                "covariance must be square, got {}x{}",
                n,
                k.ncols()
            )));
        }
        if n == 0 {
            return Ok(Self {
                l: Mat::zeros(0, 0),
                log_det: 0.0,
                jitter: 0.0,
            });
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization {
                dim: n,
                diagnostics: "matrix has non-finite entries".into(),
            });
        }
        if let Ok(f) = Self::try_factor(to_faer(k), 0.0) {
            return Ok(f);
        }
        let mean_diag = k.diagonal().mean();
        let jitter = JITTER_FACTOR * mean_diag.abs().max(f64::MIN_POSITIVE);
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        Self::try_factor(to_faer(&kj), jitter).map_err(|_| {
            let min_diag = k.diagonal().min();
            Error::Factorization {
                dim: n,
                diagnostics: format!(
                    "not positive definite; mean diagonal {mean_diag:.3e}, min diagonal {min_diag:.3e}, jitter {jitter:.3e}"
                ),
            }
        })
    }

    fn try_factor(k: MatRef<'_, f64>, jitter: f64) -> std::result::Result<Self, ()> {
        let llt = k.llt(Side::Lower).map_err(|_| ())?;
        let l = llt.L().to_owned();
        let mut log_det = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(());
            }
            log_det += 2.0 * d.ln();
        }
        Ok(Self { l, log_det, jitter })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that was needed (0 when the first attempt succeeded).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Overwrites `b` with `L⁻¹ b`.
    pub fn half_solve_in_place(&self, b: &mut DMatrix<f64>) {
        if self.dim() == 0 {
            return;
        }
        solve_lower_triangular_in_place(self.l.as_ref(), as_faer_mut(b), Par::Seq);
    }

    /// Overwrites `b` with `K⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        if self.dim() == 0 {
            return;
        }
        solve_lower_triangular_in_place(self.l.as_ref(), as_faer_mut(b), Par::Seq);
        solve_upper_triangular_in_place(self.l.transpose(), as_faer_mut(b), Par::Seq);
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut x);
        DVector::from_column_slice(x.as_slice())
    }

    /// `bᵀ K⁻¹ b` summed over the columns of `b`.
    pub fn quad_form(&self, b: &DMatrix<f64>) -> f64 {
        let mut w = b.clone();
        self.half_solve_in_place(&mut w);
        w.iter().map(|v| v * v).sum()
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and
/// eigenvectors in the matching columns.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigendecomposition of non-finite matrix".into()));
    }
    let eig = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((values, vectors))
}

/// Eigenvalues only, ascending.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))
}
