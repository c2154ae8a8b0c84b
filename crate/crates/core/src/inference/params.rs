use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate change used by the optimizer and the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }

    /// `dx/du` at natural value `x`.
    pub fn jacobian(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => x,
        }
    }
}

/// Independent prior on one parameter (natural units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Prior {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Prior::Uniform { lo, hi } | Prior::LogUniform { lo, hi } => (lo, hi),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "prior of '{name}' needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        if matches!(self, Prior::LogUniform { .. }) && lo <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "log-uniform prior of '{name}' needs lo > 0, got {lo}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.bounds();
        x >= lo && x <= hi
    }

    /// Log density in natural units, `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Prior::Uniform { lo, hi } => -(hi - lo).ln(),
            Prior::LogUniform { lo, hi } => -x.ln() - (hi.ln() - lo.ln()).ln(),
        }
    }

    /// Coordinates in which the prior is flat (used by the sampler).
    pub fn flat_transform(&self) -> Transform {
        match self {
            Prior::Uniform { .. } => Transform::Identity,
            Prior::LogUniform { .. } => Transform::Log,
        }
    }
}

/// Description of one entry of `Θ = [θ; φ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterInfo {
    pub name: String,
    pub unit: String,
    /// Coordinates used for optimization and the Laplace Hessian.
    pub transform: Transform,
    pub prior: Prior,
}

/// Independent priors over all parameters, in map order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub priors: Vec<Prior>,
}

impl PriorSpec {
    pub fn ln_density(&self, values: &[f64]) -> f64 {
        self.priors.iter().zip(values).map(|(p, x)| p.ln_pdf(*x)).sum()
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        self.priors.iter().zip(values).all(|(p, x)| p.contains(*x))
    }
}

/// Names, units, transforms and priors of `[θ; φ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMap {
    entries: Vec<ParameterInfo>,
    n_theta: usize,
}

impl ParameterMap {
    pub fn new(theta: Vec<ParameterInfo>, phi: Vec<ParameterInfo>) -> Result<Self> {
        let n_theta = theta.len();
        let entries: Vec<ParameterInfo> = theta.into_iter().chain(phi).collect();
        for (i, e) in entries.iter().enumerate() {
            e.prior.validate(&e.name)?;
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::InvalidArgument(format!("parameter name '{}' is duplicated", e.name)));
            }
            if e.transform == Transform::Log && e.prior.bounds().0 < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "log-transformed parameter '{}' needs a non-negative prior",
                    e.name
                )));
            }
        }
        Ok(Self { entries, n_theta })
    }

    pub fn entries(&self) -> &[ParameterInfo] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.entries.len() - self.n_theta
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn priors(&self) -> PriorSpec {
        PriorSpec {
            priors: self.entries.iter().map(|e| e.prior).collect(),
        }
    }

    pub fn theta_entries(&self) -> &[ParameterInfo] {
        &self.entries[..self.n_theta]
    }

    pub fn phi_entries(&self) -> &[ParameterInfo] {
        &self.entries[self.n_theta..]
    }

    /// Natural → transformed coordinates.
    pub fn to_transformed(&self, values: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(values).map(|(e, x)| e.transform.forward(*x)).collect()
    }

    pub fn from_transformed(&self, u: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(u).map(|(e, v)| e.transform.inverse(*v)).collect()
    }
}

/// Values of `θ` and `φ` (natural units) with their parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSplit {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub map: ParameterMap,
}

impl ParameterSplit {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>, map: ParameterMap) -> Result<Self> {
        if theta.len() != map.n_theta() || phi.len() != map.n_phi() {
            return Err(Error::InvalidArgument(format!(
                "expected {} structural and {} kernel parameters, got {} and {}",
                map.n_theta(),
                map.n_phi(),
                theta.len(),
                phi.len()
            )));
        }
        let s = Self { theta, phi, map };
        if let Some((e, x)) = s
            .map
            .entries()
            .iter()
            .zip(s.joined())
            .find(|(e, x)| !e.transform.forward(*x).is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "parameter '{}' = {x} has no finite transformed value",
                e.name
            )));
        }
        Ok(s)
    }

    pub fn from_joined(values: &[f64], map: ParameterMap) -> Result<Self> {
        let nt = map.n_theta();
        if values.len() != map.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                map.len(),
                values.len()
            )));
        }
        Self::new(values[..nt].to_vec(), values[nt..].to_vec(), map)
    }

    /// `[θ; φ]`.
    pub fn joined(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.phi).copied().collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.map.names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = self.map.entries().iter().position(|e| e.name == name)?;
        Some(self.joined()[i])
    }
}

/// Optional eigenvalue truncation of the error covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub enabled: bool,
    /// Retained eigenvalues satisfy `λ ≥ relative_threshold · λ_max`.
    pub relative_threshold: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            relative_threshold: 0.005,
        }
    }
}

impl TruncationPolicy {
    pub fn enabled(relative_threshold: f64) -> Result<Self> {
        let p = Self {
            enabled: true,
            relative_threshold,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(1e-3..=1e-2).contains(&self.relative_threshold) {
            return Err(Error::InvalidArgument(format!(
                "truncation threshold {} outside [1e-3, 1e-2]",
                self.relative_threshold
            )));
        }
        Ok(())
    }
}
