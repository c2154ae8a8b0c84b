//! Gaussian-process conditioning of the prediction error: point predictions,
//! sample-mixture predictions and missing-segment reconstruction.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{discretize, stack_rows, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::inference::{LaplaceSummary, ModelClass, ParameterSplit, UpdatingProblem};
use crate::kernels::{expand_channels, temporal_covariance, temporal_cross_covariance, AuxiliaryGrid, KernelConfig, KernelFamily};
use crate::linalg::{symmetrize, DenseCholesky};

/// Predictions with more scalar outputs than this keep only the diagonal of
/// each covariance.
pub const FULL_COVARIANCE_LIMIT: usize = 2000;

/// Largest fraction of mixture components that may fail before the mixture
/// itself is rejected.
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;

const MIXTURE_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

impl CovarianceMode {
    /// Full up to [`FULL_COVARIANCE_LIMIT`] outputs, diagonal beyond.
    pub fn for_dim(dim: usize) -> Self {
        if dim <= FULL_COVARIANCE_LIMIT {
            CovarianceMode::Full
        } else {
            CovarianceMode::Diagonal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// One parameter point (the MPV for [`map_predict`]).
    Map,
    /// Equally weighted mixture over posterior samples.
    Mixture {
        components: usize,
        skipped: usize,
        diagonal_only: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveCovariance {
    Full(DMatrix<f64>),
    Diagonal(Vec<f64>),
}

impl PredictiveCovariance {
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            PredictiveCovariance::Full(m) => m.diagonal().iter().copied().collect(),
            PredictiveCovariance::Diagonal(d) => d.clone(),
        }
    }

    pub fn full(&self) -> Option<&DMatrix<f64>> {
        match self {
            PredictiveCovariance::Full(m) => Some(m),
            PredictiveCovariance::Diagonal(_) => None,
        }
    }
}

/// Mean and marginal variances of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Number of posterior samples sharing this component.
    pub multiplicity: usize,
}

/// Gaussian (or Gaussian-mixture moment) prediction of the stacked response
/// on `grid`, time-major like the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub grid: AuxiliaryGrid,
    pub mean: Vec<f64>,
    pub covariance: PredictiveCovariance,
    pub provenance: Provenance,
    pub component_moments: Option<Vec<ComponentMoments>>,
}

impl PredictiveDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.covariance.diagonal()
    }

    /// Marginal standard deviations; slightly negative round-off variances map to 0.
    pub fn std_devs(&self) -> Vec<f64> {
        self.variance().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Columns `t`, `mean_c`, `sd_c` per channel and, with `band = Some(k)`,
    /// `lower_c`/`upper_c` at `mean ∓ k·sd`.
    pub fn to_table(&self, band: Option<f64>) -> String {
        let nc = self.grid.channels();
        let sd = self.std_devs();
        let mut s = String::from("t");
        for c in 0..nc {
            let _ = write!(s, ",mean_{c}");
        }
        for c in 0..nc {
            let _ = write!(s, ",sd_{c}");
        }
        if band.is_some() {
            for c in 0..nc {
                let _ = write!(s, ",lower_{c},upper_{c}");
            }
        }
        s.push('\n');
        for (i, t) in self.grid.times().iter().enumerate() {
            let _ = write!(s, "{t:.10e}");
            for c in 0..nc {
                let _ = write!(s, ",{:.10e}", self.mean[i * nc + c]);
            }
            for c in 0..nc {
                let _ = write!(s, ",{:.10e}", sd[i * nc + c]);
            }
            if let Some(k) = band {
                for c in 0..nc {
                    let (m, d) = (self.mean[i * nc + c], sd[i * nc + c]);
                    let _ = write!(s, ",{:.10e},{:.10e}", m - k * d, m + k * d);
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Conditions the Gaussian process `N(prior_mean, K)` on a training residual:
/// `μ = m + K_*ᵀ K⁻¹ r` and `Σ = K_** − K_*ᵀ K⁻¹ K_*`, both with `σ_n²` on
/// their diagonals (noisy observations are predicted). Channels share the
/// temporal kernel and are independent.
pub fn condition_on_residual(
    kernel: &KernelConfig,
    train: &AuxiliaryGrid,
    residual: &[f64],
    pred: &AuxiliaryGrid,
    prior_mean: &[f64],
    mode: CovarianceMode,
) -> Result<(Vec<f64>, PredictiveCovariance)> {
    let nc = train.channels();
    if pred.channels() != nc {
        return Err(Error::InvalidArgument(format!(
            "training grid has {nc} channels but the prediction grid has {}",
            pred.channels()
        )));
    }
    if residual.len() != train.dim() || prior_mean.len() != pred.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} residuals and {} prior means, got {} and {}",
            train.dim(),
            pred.dim(),
            residual.len(),
            prior_mean.len()
        )));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training samples to condition on".into()));
    }
    let (n, m) = (train.len(), pred.len());
    let noise = kernel.noise_floor();
    if kernel.family() == KernelFamily::Gwn {
        let cov = match mode {
            CovarianceMode::Full => PredictiveCovariance::Full(DMatrix::from_diagonal_element(m * nc, m * nc, noise)),
            CovarianceMode::Diagonal => PredictiveCovariance::Diagonal(vec![noise; m * nc]),
        };
        return Ok((prior_mean.to_vec(), cov));
    }
    let chol = DenseCholesky::factor(&temporal_covariance(kernel, train, true))?;
    let mut v = temporal_cross_covariance(kernel, train, pred);
    chol.half_solve_in_place(&mut v);
    let mut w = DMatrix::from_fn(n, nc, |i, c| residual[i * nc + c]);
    chol.half_solve_in_place(&mut w);
    let shift = v.tr_mul(&w);
    let mean: Vec<f64> = (0..m * nc).map(|k| prior_mean[k] + shift[(k / nc, k % nc)]).collect();
    let cov = match mode {
        CovarianceMode::Full => {
            let mut s = temporal_covariance(kernel, pred, true) - v.tr_mul(&v);
            symmetrize(&mut s);
            PredictiveCovariance::Full(expand_channels(&s, nc))
        }
        CovarianceMode::Diagonal => {
            let prior_var = kernel.value(0.0) + noise;
            let diag: Vec<f64> = (0..m)
                .flat_map(|j| {
                    let explained: f64 = v.column(j).iter().map(|x| x * x).sum();
                    std::iter::repeat_n(prior_var - explained, nc)
                })
                .collect();
            PredictiveCovariance::Diagonal(diag)
        }
    };
    Ok((mean, cov))
}

fn check_rows(rows: &[usize], len: usize, what: &str) -> Result<()> {
    if rows.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{what} rows must be strictly increasing")));
    }
    if let Some(&last) = rows.last() {
        if last >= len {
            return Err(Error::InvalidArgument(format!(
                "{what} row {last} lies beyond the {len}-sample input history"
            )));
        }
    }
    Ok(())
}

/// Stacked structural response `f(X_pred; θ)` at `rows` of an input history
/// sampled at the dataset step.
pub fn structural_prediction(class: &ModelClass, dt: f64, theta: &[f64], pred_input: &[f64], rows: &[usize]) -> Result<Vec<f64>> {
    check_rows(rows, pred_input.len(), "prediction")?;
    let Some(&last) = rows.last() else {
        return Ok(Vec::new());
    };
    let model = class.structure.instantiate(theta)?;
    let f = discretize(&model, dt)?.response(&pred_input[..=last], &model.observed_dofs, None)?;
    Ok(stack_rows(&f, rows))
}

fn component(
    problem: &UpdatingProblem<'_>,
    theta: &[f64],
    phi: &[f64],
    pred_input: &[f64],
    pred: &AuxiliaryGrid,
    rows: &[usize],
    mode: CovarianceMode,
) -> Result<(Vec<f64>, PredictiveCovariance)> {
    let prior_mean = structural_prediction(problem.class(), problem.dataset().dt, theta, pred_input, rows)?;
    let residual = problem.residual(theta)?;
    let kernel = problem.kernel(phi)?;
    condition_on_residual(&kernel, problem.grid(), &residual, pred, &prior_mean, mode)
}

/// Conditional distribution of the response at `pred_rows` of `pred_input`
/// (an input history starting at `t = 0` with the dataset step) given the
/// problem's training data at parameters `(θ, φ)`.
pub fn conditional_predict(
    problem: &UpdatingProblem<'_>,
    theta: &[f64],
    phi: &[f64],
    pred_input: &[f64],
    pred_rows: &[usize],
) -> Result<PredictiveDistribution> {
    check_rows(pred_rows, pred_input.len(), "prediction")?;
    let grid = AuxiliaryGrid::from_rows(problem.dataset().dt, pred_rows, problem.dataset().n_outputs())?;
    let mode = CovarianceMode::for_dim(grid.dim());
    let (mean, covariance) = component(problem, theta, phi, pred_input, &grid, pred_rows, mode)?;
    Ok(PredictiveDistribution {
        grid,
        mean,
        covariance,
        provenance: Provenance::Map,
        component_moments: None,
    })
}

/// Prediction at the MPV, ignoring parameter uncertainty.
pub fn map_predict(
    summary: &LaplaceSummary,
    problem: &UpdatingProblem<'_>,
    pred_input: &[f64],
    pred_rows: &[usize],
) -> Result<PredictiveDistribution> {
    if !summary.converged {
        return Err(Error::InvalidArgument("MPV search did not converge".into()));
    }
    if &summary.mpv.map != problem.map() {
        return Err(Error::InvalidArgument("summary belongs to a different model class".into()));
    }
    conditional_predict(problem, &summary.mpv.theta, &summary.mpv.phi, pred_input, pred_rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MixtureOptions {
    /// Keep per-component means and variances.
    pub keep_components: bool,
}

struct Accumulator {
    weight: f64,
    shift: Vec<f64>,
    second: PredictiveCovariance,
}

/// Moments of the equally weighted Gaussian mixture over posterior samples:
/// mean `E[μ]` and covariance `E[Σ] + E[μμᵀ] − E[μ]E[μ]ᵀ`. Duplicate samples
/// are evaluated once. Components that fail are skipped with a warning.
pub fn mixture_predict(
    samples: &crate::sampler::PosteriorSamples,
    problem: &UpdatingProblem<'_>,
    pred_input: &[f64],
    pred_rows: &[usize],
    options: &MixtureOptions,
) -> Result<PredictiveDistribution> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    let map = problem.map();
    if samples.dim() != map.len() {
        return Err(Error::InvalidArgument(format!(
            "samples have {} columns but the model class has {} parameters",
            samples.dim(),
            map.len()
        )));
    }
    check_rows(pred_rows, pred_input.len(), "prediction")?;
    let grid = AuxiliaryGrid::from_rows(problem.dataset().dt, pred_rows, problem.dataset().n_outputs())?;
    let dim = grid.dim();
    let mode = CovarianceMode::for_dim(dim);
    let nt = map.n_theta();
    let unique = samples.unique();
    let total = samples.len();

    let mut reference: Option<Vec<f64>> = None;
    let mut acc: Option<Accumulator> = None;
    let mut kept = Vec::new();
    let mut skipped = 0usize;
    for chunk in unique.chunks(MIXTURE_CHUNK) {
        let results: Vec<Result<(Vec<f64>, PredictiveCovariance)>> = chunk
            .par_iter()
            .map(|&(i, _)| {
                let x = samples.sample(i);
                component(problem, &x[..nt], &x[nt..], pred_input, &grid, pred_rows, mode)
            })
            .collect();
        for (&(i, mult), r) in chunk.iter().zip(results) {
            let (mean, cov) = match r {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("skipping posterior sample {i}: {e}");
                    skipped += mult;
                    continue;
                }
            };
            let w = mult as f64;
            let r0 = reference.get_or_insert_with(|| mean.clone());
            let d: Vec<f64> = mean.iter().zip(r0.iter()).map(|(a, b)| a - b).collect();
            let a = acc.get_or_insert_with(|| Accumulator {
                weight: 0.0,
                shift: vec![0.0; dim],
                second: match mode {
                    CovarianceMode::Full => PredictiveCovariance::Full(DMatrix::zeros(dim, dim)),
                    CovarianceMode::Diagonal => PredictiveCovariance::Diagonal(vec![0.0; dim]),
                },
            });
            a.weight += w;
            for (s, di) in a.shift.iter_mut().zip(&d) {
                *s += w * di;
            }
            match (&mut a.second, &cov) {
                (PredictiveCovariance::Full(s), PredictiveCovariance::Full(c)) => {
                    let dv = nalgebra::DVector::from_column_slice(&d);
                    *s += c * w;
                    s.ger(w, &dv, &dv, 1.0);
                }
                (PredictiveCovariance::Diagonal(s), c) => {
                    for ((sv, cv), di) in s.iter_mut().zip(c.diagonal()).zip(&d) {
                        *sv += w * (cv + di * di);
                    }
                }
                _ => unreachable!("components share the covariance mode"),
            }
            if options.keep_components {
                kept.push(ComponentMoments {
                    variance: cov.diagonal(),
                    mean,
                    multiplicity: mult,
                });
            }
        }
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(Error::Numerical(format!(
            "{skipped} of {total} mixture components failed"
        )));
    }
    let (Some(r0), Some(a)) = (reference, acc) else {
        return Err(Error::Numerical("every mixture component failed".into()));
    };
    let dbar: Vec<f64> = a.shift.iter().map(|s| s / a.weight).collect();
    let mean: Vec<f64> = r0.iter().zip(&dbar).map(|(r, d)| r + d).collect();
    let covariance = match a.second {
        PredictiveCovariance::Full(mut s) => {
            s /= a.weight;
            let dv = nalgebra::DVector::from_column_slice(&dbar);
            s.ger(-1.0, &dv, &dv, 1.0);
            symmetrize(&mut s);
            PredictiveCovariance::Full(s)
        }
        PredictiveCovariance::Diagonal(s) => {
            PredictiveCovariance::Diagonal(s.iter().zip(&dbar).map(|(v, d)| v / a.weight - d * d).collect())
        }
    };
    Ok(PredictiveDistribution {
        grid,
        mean,
        covariance,
        provenance: Provenance::Mixture {
            components: total - skipped,
            skipped,
            diagonal_only: mode == CovarianceMode::Diagonal,
        },
        component_moments: options.keep_components.then_some(kept),
    })
}

/// Rows with `t0 ≤ t < t1` (the gap) and the remaining rows.
pub fn split_gap(dataset: &TimeSeriesDataset, t0: f64, t1: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::InvalidArgument(format!("invalid gap [{t0}, {t1})")));
    }
    let to_row = |t: f64| ((t / dataset.dt - 1e-9).ceil().max(0.0) as usize).min(dataset.len());
    let (a, b) = (to_row(t0), to_row(t1));
    let observed = (0..a).chain(b..dataset.len()).collect();
    Ok((observed, (a..b).collect()))
}

/// Infills the outputs over `[t0, t1)` by conditioning on every other sample
/// of the record, with the input known throughout.
pub fn reconstruct_missing(
    class: &ModelClass,
    dataset: &TimeSeriesDataset,
    at: &ParameterSplit,
    t0: f64,
    t1: f64,
) -> Result<PredictiveDistribution> {
    let (observed, gap) = split_gap(dataset, t0, t1)?;
    if observed.is_empty() {
        return Err(Error::InvalidArgument("the gap covers the whole record; nothing is observed".into()));
    }
    let problem = UpdatingProblem::new(class, dataset, observed)?;
    if &at.map != problem.map() {
        return Err(Error::InvalidArgument("parameters belong to a different model class".into()));
    }
    conditional_predict(&problem, &at.theta, &at.phi, dataset.input_history(), &gap)
}
