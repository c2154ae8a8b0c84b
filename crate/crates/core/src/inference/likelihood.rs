use nalgebra::{DMatrix, DVector};

use super::TruncationPolicy;
use crate::dynamics::{simulate_response, ShearBuildingModel, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::kernels::{temporal_covariance, toeplitz_column, AuxiliaryGrid, KernelConfig, KernelFamily};
use crate::linalg::{symmetric_eigen, toeplitz_log_density, DenseCholesky, ToeplitzFactor, LN_2PI};

/// Eigenvalue-truncated representation of a covariance matrix. Retained
/// eigenpairs are used exactly; the complementary subspace is given the
/// variance `noise_floor`.
#[derive(Debug, Clone)]
pub struct TruncatedSpectralForm {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    noise_floor: f64,
    dim: usize,
}

/// Truncates `k` at `policy.relative_threshold · λ_max` (the `enabled` flag is
/// not consulted here).
pub fn truncated_spectral_form(k: &DMatrix<f64>, noise_floor: f64, policy: &TruncationPolicy) -> Result<TruncatedSpectralForm> {
    let dim = k.nrows();
    if dim == 0 {
        return Err(Error::InvalidArgument("cannot truncate an empty matrix".into()));
    }
    let (vals, vecs) = symmetric_eigen(k)?;
    let lmax = vals[dim - 1];
    if !(lmax > 0.0) {
        return Err(Error::Numerical(format!("largest eigenvalue {lmax:.3e} is not positive")));
    }
    let cut = policy.relative_threshold * lmax;
    let keep: Vec<usize> = (0..dim).rev().filter(|&i| vals[i] >= cut).collect();
    let r = keep.len();
    if r < dim && !(noise_floor > 0.0) {
        return Err(Error::InvalidArgument(
            "truncated form discards directions but the noise floor is not positive".into(),
        ));
    }
    let values = keep.iter().map(|&i| vals[i]).collect();
    let vectors = DMatrix::from_fn(dim, r, |i, j| vecs[(i, keep[j])]);
    Ok(TruncatedSpectralForm {
        values,
        vectors,
        noise_floor,
        dim,
    })
}

impl TruncatedSpectralForm {
    pub fn retained(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Retained eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn log_det(&self) -> f64 {
        let discarded = (self.dim - self.retained()) as f64;
        let tail = if discarded > 0.0 { discarded * self.noise_floor.ln() } else { 0.0 };
        self.values.iter().map(|v| v.ln()).sum::<f64>() + tail
    }

    fn project(&self, r: &[f64]) -> DVector<f64> {
        self.vectors.tr_mul(&DVector::from_column_slice(r))
    }

    pub fn quad_form(&self, r: &[f64]) -> f64 {
        let p = self.project(r);
        let total: f64 = r.iter().map(|v| v * v).sum();
        let captured: f64 = p.iter().map(|v| v * v).sum();
        let kept: f64 = p.iter().zip(&self.values).map(|(c, l)| c * c / l).sum();
        if self.retained() == self.dim {
            kept
        } else {
            kept + (total - captured).max(0.0) / self.noise_floor
        }
    }

    /// Applies the inverse operator.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        let p = self.project(r);
        let mut out: Vec<f64> = if self.retained() == self.dim {
            vec![0.0; self.dim]
        } else {
            let resid = DVector::from_column_slice(r) - &self.vectors * &p;
            resid.iter().map(|v| v / self.noise_floor).collect()
        };
        let scaled = DVector::from_iterator(p.len(), p.iter().zip(&self.values).map(|(c, l)| c / l));
        let back = &self.vectors * scaled;
        for (o, b) in out.iter_mut().zip(back.iter()) {
            *o += b;
        }
        out
    }
}

/// Factorized temporal covariance shared by every output channel.
#[derive(Debug, Clone)]
pub enum CovarianceFactor {
    /// `σ_n² I` (white-noise kernel).
    Diagonal(f64),
    Toeplitz(ToeplitzFactor),
    Dense(DenseCholesky),
    Truncated(TruncatedSpectralForm),
}

/// Error covariance `K = K_t ⊗ I_{N_o}` in factorized form.
#[derive(Debug, Clone)]
pub struct ErrorCovariance {
    factor: CovarianceFactor,
    n_time: usize,
    channels: usize,
}

fn toeplitz_with_jitter(col: &[f64]) -> Result<ToeplitzFactor> {
    ToeplitzFactor::new(col).or_else(|first| {
        let mut c = col.to_vec();
        c[0] += crate::linalg::dense::JITTER_FACTOR * col[0].abs();
        ToeplitzFactor::new(&c).map_err(|_| first)
    })
}

impl ErrorCovariance {
    /// Picks the cheapest exact representation: diagonal for white noise,
    /// Levinson for gap-free uniform grids, dense Cholesky otherwise, or the
    /// truncated spectral form when the policy asks for it.
    pub fn new(kernel: &KernelConfig, grid: &AuxiliaryGrid, policy: &TruncationPolicy) -> Result<Self> {
        let n = grid.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty grid".into()));
        }
        let factor = if policy.enabled {
            let k = temporal_covariance(kernel, grid, true);
            CovarianceFactor::Truncated(truncated_spectral_form(&k, kernel.noise_floor(), policy)?)
        } else if kernel.family() == KernelFamily::Gwn {
            CovarianceFactor::Diagonal(kernel.noise_floor())
        } else if let Some(step) = grid.uniform_step() {
            CovarianceFactor::Toeplitz(toeplitz_with_jitter(&toeplitz_column(kernel, step, n, true))?)
        } else {
            CovarianceFactor::Dense(DenseCholesky::factor(&temporal_covariance(kernel, grid, true))?)
        };
        Ok(Self {
            factor,
            n_time: n,
            channels: grid.channels(),
        })
    }

    pub fn factor(&self) -> &CovarianceFactor {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.n_time * self.channels
    }

    pub fn log_det(&self) -> f64 {
        let t = match &self.factor {
            CovarianceFactor::Diagonal(s) => self.n_time as f64 * s.ln(),
            CovarianceFactor::Toeplitz(f) => f.log_det(),
            CovarianceFactor::Dense(f) => f.log_det(),
            CovarianceFactor::Truncated(f) => f.log_det(),
        };
        self.channels as f64 * t
    }

    fn check_len(&self, r: &[f64]) {
        assert_eq!(r.len(), self.dim(), "residual length does not match covariance");
    }

    /// `rᵀ K⁻¹ r` for a time-major stacked residual.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        self.check_len(r);
        if let CovarianceFactor::Diagonal(s) = self.factor {
            return r.iter().map(|v| v * v).sum::<f64>() / s;
        }
        channel_columns(r, self.channels)
            .iter()
            .map(|col| match &self.factor {
                CovarianceFactor::Toeplitz(f) => f.quad_form(col),
                CovarianceFactor::Dense(f) => f.quad_form(&DMatrix::from_column_slice(col.len(), 1, col)),
                CovarianceFactor::Truncated(f) => f.quad_form(col),
                CovarianceFactor::Diagonal(_) => unreachable!(),
            })
            .sum()
    }

    /// `K⁻¹ r` for a time-major stacked residual.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.check_len(r);
        if let CovarianceFactor::Diagonal(s) = self.factor {
            return r.iter().map(|v| v / s).collect();
        }
        let cols: Vec<Vec<f64>> = channel_columns(r, self.channels)
            .iter()
            .map(|col| match &self.factor {
                CovarianceFactor::Toeplitz(f) => f.solve(col),
                CovarianceFactor::Dense(f) => f.solve_vec(&DVector::from_column_slice(col)).as_slice().to_vec(),
                CovarianceFactor::Truncated(f) => f.solve(col),
                CovarianceFactor::Diagonal(_) => unreachable!(),
            })
            .collect();
        interleave(&cols)
    }

    /// `ln N(r | 0, K)`.
    pub fn log_density(&self, r: &[f64]) -> f64 {
        -0.5 * self.quad_form(r) - 0.5 * self.log_det() - 0.5 * self.dim() as f64 * LN_2PI
    }
}

/// Splits a time-major stacked vector into per-channel series.
pub(crate) fn channel_columns(r: &[f64], channels: usize) -> Vec<Vec<f64>> {
    (0..channels).map(|c| r.iter().skip(c).step_by(channels).copied().collect()).collect()
}

pub(crate) fn interleave(cols: &[Vec<f64>]) -> Vec<f64> {
    let n = cols.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(n * cols.len());
    for i in 0..n {
        for c in cols {
            out.push(c[i]);
        }
    }
    out
}

/// `ln N(r | 0, K(kernel, grid))` for a time-major residual. Uses streaming
/// Levinson on gap-free grids, so no `O(n²)` storage is kept.
pub fn gaussian_log_density(kernel: &KernelConfig, grid: &AuxiliaryGrid, r: &[f64], policy: &TruncationPolicy) -> Result<f64> {
    let dim = grid.dim();
    if r.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "residual has {} entries but the grid holds {dim}",
            r.len()
        )));
    }
    if !policy.enabled && kernel.family() != KernelFamily::Gwn {
        if let Some(step) = grid.uniform_step() {
            let col = toeplitz_column(kernel, step, grid.len(), true);
            let cols = channel_columns(r, grid.channels());
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let (ld, q) = toeplitz_log_density(&col, &refs).or_else(|first| {
                let mut c = col.clone();
                c[0] += crate::linalg::dense::JITTER_FACTOR * col[0].abs();
                toeplitz_log_density(&c, &refs).map_err(|_| first)
            })?;
            let quad: f64 = q.iter().sum();
            return Ok(-0.5 * quad - 0.5 * grid.channels() as f64 * ld - 0.5 * dim as f64 * LN_2PI);
        }
    }
    Ok(ErrorCovariance::new(kernel, grid, policy)?.log_density(r))
}

/// `ln N(Y | f(X;θ), K(φ))` over the whole dataset.
pub fn log_likelihood(
    dataset: &TimeSeriesDataset,
    model: &ShearBuildingModel,
    kernel: &KernelConfig,
    policy: &TruncationPolicy,
) -> Result<f64> {
    if model.observed_dofs.len() != dataset.n_outputs() {
        return Err(Error::InvalidArgument(format!(
            "model observes {} DOFs but the dataset has {} channels",
            model.observed_dofs.len(),
            dataset.n_outputs()
        )));
    }
    let f = simulate_response(model, dataset.input_history(), dataset.dt, None)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let grid = AuxiliaryGrid::from_rows(dataset.dt, &rows, dataset.n_outputs())?;
    let r: Vec<f64> = (0..dataset.len())
        .flat_map(|i| (0..dataset.n_outputs()).map(move |c| (i, c)))
        .map(|(i, c)| dataset.output[(i, c)] - f[(i, c)])
        .collect();
    gaussian_log_density(kernel, &grid, &r, policy)
}
