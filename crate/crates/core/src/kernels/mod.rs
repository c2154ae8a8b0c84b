//! Stationary covariance kernels over time and covariance assembly.

mod grid;

pub use grid::AuxiliaryGrid;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// White noise only (`σ_n² δ_ij`).
    Gwn,
    /// Squared exponential.
    Se,
    /// Periodic exponential.
    Pe,
    /// Multi-modal trigonometric exponential.
    Mmte,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gwn => "gwn",
            KernelFamily::Se => "se",
            KernelFamily::Pe => "pe",
            KernelFamily::Mmte => "mmte",
        }
    }

    /// Number of kernel parameters (excluding the noise floor).
    pub fn n_params(self, order: usize) -> usize {
        match self {
            KernelFamily::Gwn => 0,
            KernelFamily::Se => 2,
            KernelFamily::Pe => 3,
            KernelFamily::Mmte => 3 * order,
        }
    }

    /// Canonical parameter names, noise floor excluded.
    pub fn param_names(self, order: usize) -> Vec<String> {
        match self {
            KernelFamily::Gwn => vec![],
            KernelFamily::Se => vec!["sigma_f2".into(), "inv_ell2".into()],
            KernelFamily::Pe => vec!["sigma_f2".into(), "inv_ell2".into(), "omega".into()],
            KernelFamily::Mmte => (1..=order)
                .flat_map(|k| [format!("sigma_f2_{k}"), format!("omega_{k}"), format!("inv_ell2_{k}")])
                .collect(),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gwn" => Ok(KernelFamily::Gwn),
            "se" => Ok(KernelFamily::Se),
            "pe" => Ok(KernelFamily::Pe),
            "mmte" => Ok(KernelFamily::Mmte),
            other => Err(Error::InvalidArgument(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Name of the noise-floor parameter.
pub const NOISE_NAME: &str = "sigma_n2";

/// Kernel family plus hyperparameters in canonical order:
/// SE `[σ_f², ℓ⁻²]`, PE `[σ_f², ℓ⁻², ω]`, MMTE `[σ_k², ω_k, ℓ_k⁻²]` per
/// component with `ω` ascending. The noise floor `σ_n²` is kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRecord", into = "KernelRecord")]
pub struct KernelConfig {
    family: KernelFamily,
    params: Vec<f64>,
    noise_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedValue {
    name: String,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelRecord {
    family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mmte_order: Option<usize>,
    parameters: Vec<NamedValue>,
    noise_floor: f64,
}

impl From<KernelConfig> for KernelRecord {
    fn from(k: KernelConfig) -> Self {
        let order = k.mmte_order();
        KernelRecord {
            family: k.family,
            mmte_order: (k.family == KernelFamily::Mmte).then_some(order),
            parameters: k
                .family
                .param_names(order)
                .into_iter()
                .zip(k.params)
                .map(|(name, value)| NamedValue { name, value })
                .collect(),
            noise_floor: k.noise_floor,
        }
    }
}

impl TryFrom<KernelRecord> for KernelConfig {
    type Error = Error;
    fn try_from(r: KernelRecord) -> Result<Self> {
        let order = r.mmte_order.unwrap_or(r.parameters.len() / 3);
        let names = r.family.param_names(order);
        if names.len() != r.parameters.len() {
            return Err(Error::InvalidArgument(format!(
                "{} kernel of order {order} expects {} parameters, found {}",
                r.family,
                names.len(),
                r.parameters.len()
            )));
        }
        for (n, p) in names.iter().zip(&r.parameters) {
            if *n != p.name {
                return Err(Error::InvalidArgument(format!(
                    "expected parameter '{n}', found '{}'",
                    p.name
                )));
            }
        }
        KernelConfig::new(r.family, r.parameters.iter().map(|p| p.value).collect(), r.noise_floor)
    }
}

impl KernelConfig {
    /// Validates and canonicalizes (MMTE components sorted by `ω`).
    pub fn new(family: KernelFamily, params: Vec<f64>, noise_floor: f64) -> Result<Self> {
        let expected_len_ok = match family {
            KernelFamily::Mmte => !params.is_empty() && params.len() % 3 == 0,
            f => params.len() == f.n_params(0),
        };
        if !expected_len_ok {
            return Err(Error::InvalidArgument(format!(
                "{family} kernel cannot take {} parameters",
                params.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "{family} kernel parameters must be positive and finite, found {p}"
            )));
        }
        if !(noise_floor.is_finite() && noise_floor >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise floor {noise_floor} must be >= 0")));
        }
        if family == KernelFamily::Gwn && noise_floor <= 0.0 {
            return Err(Error::InvalidArgument("GWN kernel needs a positive noise floor".into()));
        }
        let mut k = Self {
            family,
            params,
            noise_floor,
        };
        k.canonicalize();
        Ok(k)
    }

    pub fn gwn(noise_floor: f64) -> Result<Self> {
        Self::new(KernelFamily::Gwn, vec![], noise_floor)
    }

    pub fn se(variance: f64, inv_length_sq: f64, noise_floor: f64) -> Result<Self> {
        Self::new(KernelFamily::Se, vec![variance, inv_length_sq], noise_floor)
    }

    pub fn pe(variance: f64, inv_length_sq: f64, omega: f64, noise_floor: f64) -> Result<Self> {
        Self::new(KernelFamily::Pe, vec![variance, inv_length_sq, omega], noise_floor)
    }

    /// MMTE from `(σ², ω, ℓ⁻²)` triples.
    pub fn mmte(components: &[(f64, f64, f64)], noise_floor: f64) -> Result<Self> {
        let params = components.iter().flat_map(|&(s, w, l)| [s, w, l]).collect();
        Self::new(KernelFamily::Mmte, params, noise_floor)
    }

    fn canonicalize(&mut self) {
        if self.family == KernelFamily::Mmte {
            let mut comps: Vec<[f64; 3]> = self.params.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            comps.sort_by(|a, b| a[1].total_cmp(&b[1]));
            self.params = comps.concat();
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    /// Number of MMTE components (0 for other families).
    pub fn mmte_order(&self) -> usize {
        if self.family == KernelFamily::Mmte {
            self.params.len() / 3
        } else {
            0
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        self.family.param_names(self.mmte_order())
    }

    /// Kernel value at time separation `d ≥ 0`, noise floor excluded.
    ///
    /// # Panics
    /// If `d` is negative or NaN.
    pub fn value(&self, d: f64) -> f64 {
        assert!(d >= 0.0, "kernel distance must be non-negative, got {d}");
        let p = &self.params;
        match self.family {
            KernelFamily::Gwn => 0.0,
            KernelFamily::Se => p[0] * (-0.5 * d * d * p[1]).exp(),
            KernelFamily::Pe => {
                let s = (p[2] * d).sin();
                p[0] * (-0.5 * s * s * p[1]).exp()
            }
            KernelFamily::Mmte => p
                .chunks(3)
                .map(|c| c[0] * (-d * d * c[2]).exp() * (c[1] * d).cos())
                .sum(),
        }
    }

    /// Kernel value at zero separation (the signal variance).
    pub fn variance(&self) -> f64 {
        self.value(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<kernel>".into(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Kernel value at separation `d` (see [`KernelConfig::value`]).
pub fn kernel_value(config: &KernelConfig, d: f64) -> f64 {
    config.value(d)
}

/// First column of the temporal covariance on a uniform grid: `c_k = k(k·step)`,
/// plus the noise floor at lag 0 when requested.
pub fn toeplitz_column(config: &KernelConfig, step: f64, n: usize, include_noise: bool) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|k| config.value(k as f64 * step)).collect();
    if include_noise && n > 0 {
        c[0] += config.noise_floor;
    }
    c
}

/// Temporal covariance between two grids (no noise term).
pub fn temporal_cross_covariance(config: &KernelConfig, a: &AuxiliaryGrid, b: &AuxiliaryGrid) -> DMatrix<f64> {
    if let Some((step, ia, ib)) = AuxiliaryGrid::shared_lattice(a, b) {
        // Lag table: the matrix depends only on index differences.
        let lo = ia[0] - ib[ib.len() - 1];
        let hi = ia[ia.len() - 1] - ib[0];
        let table: Vec<f64> = (lo..=hi).map(|l| config.value(l.unsigned_abs() as f64 * step)).collect();
        DMatrix::from_fn(ia.len(), ib.len(), |i, j| table[(ia[i] - ib[j] - lo) as usize])
    } else {
        let (ta, tb) = (a.times(), b.times());
        DMatrix::from_fn(ta.len(), tb.len(), |i, j| config.value((ta[i] - tb[j]).abs()))
    }
}

/// Temporal covariance on one grid, optionally with `σ_n²` on the diagonal.
/// Exactly symmetric.
pub fn temporal_covariance(config: &KernelConfig, grid: &AuxiliaryGrid, include_noise: bool) -> DMatrix<f64> {
    let n = grid.len();
    let mut k = if grid.lattice_indices().is_some() {
        temporal_cross_covariance(config, grid, grid)
    } else {
        let t = grid.times();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = config.value(t[i] - t[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    };
    if include_noise {
        for i in 0..n {
            k[(i, i)] += config.noise_floor;
        }
    }
    k
}

/// `temporal ⊗ I_{N_o}` in time-major ordering.
pub(crate) fn expand_channels(t: &DMatrix<f64>, channels: usize) -> DMatrix<f64> {
    if channels == 1 {
        return t.clone();
    }
    let mut out = DMatrix::zeros(t.nrows() * channels, t.ncols() * channels);
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            let v = t[(i, j)];
            for c in 0..channels {
                out[(i * channels + c, j * channels + c)] = v;
            }
        }
    }
    out
}

/// Full `(n·N_o)²` covariance including `σ_n² I`.
pub fn assemble_covariance(config: &KernelConfig, grid: &AuxiliaryGrid) -> DMatrix<f64> {
    expand_channels(&temporal_covariance(config, grid, true), grid.channels())
}

/// `(n·N_o) × (n'·N_o)` cross covariance between training and prediction grids (no noise).
pub fn assemble_cross_covariance(
    config: &KernelConfig,
    train: &AuxiliaryGrid,
    pred: &AuxiliaryGrid,
) -> Result<DMatrix<f64>> {
    if train.channels() != pred.channels() {
        return Err(Error::InvalidArgument(format!(
            "grids have {} and {} channels",
            train.channels(),
            pred.channels()
        )));
    }
    Ok(expand_channels(&temporal_cross_covariance(config, train, pred), train.channels()))
}
