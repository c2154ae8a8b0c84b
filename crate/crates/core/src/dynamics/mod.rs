//! Lumped-mass shear-building models: assembly, modal analysis and simulation.

mod dataset;
mod simulate;

pub use dataset::{stack_rows, DatasetMetadata, TimeSeriesDataset};
pub use simulate::{
    discretize, mechanical_energy, simulate_response, simulate_states, synthesize_dataset, DiscreteSystem,
    GwnExcitation, InitialState, StateHistory,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Damping description. Rayleigh damping is `C = αK + βM`, with α multiplying
/// the stiffness matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampingSpec {
    Rayleigh { alpha: f64, beta: f64 },
    ModalRatios { zeta: Vec<f64> },
    ViscousRatio { zeta: f64 },
}

impl DampingSpec {
    fn validate(&self, dofs: usize) -> Result<()> {
        let ratio_ok = |z: f64| z.is_finite() && (0.0..1.0).contains(&z);
        match self {
            DampingSpec::Rayleigh { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha >= 0.0 && *beta >= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "Rayleigh coefficients must be finite and non-negative (alpha {alpha}, beta {beta})"
                    )));
                }
            }
            DampingSpec::ModalRatios { zeta } => {
                if zeta.len() != dofs {
                    return Err(Error::InvalidModel(format!(
                        "{} modal damping ratios given for {dofs} modes",
                        zeta.len()
                    )));
                }
                if let Some(z) = zeta.iter().find(|z| !ratio_ok(**z)) {
                    return Err(Error::InvalidModel(format!("damping ratio {z} outside [0, 1)")));
                }
            }
            DampingSpec::ViscousRatio { zeta } => {
                if !ratio_ok(*zeta) {
                    return Err(Error::InvalidModel(format!("damping ratio {zeta} outside [0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Where the scalar input enters the structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Excitation {
    /// Force (N) applied at one floor.
    Force { dof: usize },
    /// Ground acceleration (m/s²), entering as `-M·1·a_g`.
    Base,
}

/// Shear frame with floor `i` connected to floor `i-1` (or the ground for
/// `i = 0`) by story stiffness `k_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearBuildingModel {
    pub masses: Vec<f64>,
    pub story_stiffnesses: Vec<f64>,
    pub damping: DampingSpec,
    pub observed_dofs: Vec<usize>,
    pub excitation: Excitation,
}

/// Mass, stiffness and damping matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
}

/// Natural frequencies (rad/s, ascending) and mass-normalized mode shapes
/// stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalProperties {
    pub frequencies: Vec<f64>,
    pub shapes: DMatrix<f64>,
}

impl ShearBuildingModel {
    pub fn new(
        masses: Vec<f64>,
        story_stiffnesses: Vec<f64>,
        damping: DampingSpec,
        observed_dofs: Vec<usize>,
        excitation: Excitation,
    ) -> Result<Self> {
        let model = Self {
            masses,
            story_stiffnesses,
            damping,
            observed_dofs,
            excitation,
        };
        model.validate()?;
        Ok(model)
    }

    /// Single-degree-of-freedom oscillator forced and observed at its mass.
    pub fn sdof(mass: f64, stiffness: f64, zeta: f64) -> Result<Self> {
        Self::new(
            vec![mass],
            vec![stiffness],
            DampingSpec::ViscousRatio { zeta },
            vec![0],
            Excitation::Force { dof: 0 },
        )
    }

    pub fn dofs(&self) -> usize {
        self.masses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no stories".into()));
        }
        if self.story_stiffnesses.len() != n {
            return Err(Error::InvalidModel(format!(
                "{} story stiffnesses for {n} masses",
                self.story_stiffnesses.len()
            )));
        }
        if let Some((i, m)) = self
            .masses
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::InvalidModel(format!("mass {i} is {m}, must be positive")));
        }
        if let Some((i, k)) = self
            .story_stiffnesses
            .iter()
            .enumerate()
            .find(|(_, k)| !(k.is_finite() && **k > 0.0))
        {
            return Err(Error::InvalidModel(format!(
                "story stiffness {i} is {k}, must be positive"
            )));
        }
        if self.observed_dofs.is_empty() {
            return Err(Error::InvalidModel("no observed DOFs".into()));
        }
        for (pos, &d) in self.observed_dofs.iter().enumerate() {
            if d >= n {
                return Err(Error::InvalidModel(format!("observed DOF {d} out of range 0..{n}")));
            }
            if self.observed_dofs[..pos].contains(&d) {
                return Err(Error::InvalidModel(format!("observed DOF {d} listed twice")));
            }
        }
        if let Excitation::Force { dof } = self.excitation {
            if dof >= n {
                return Err(Error::InvalidModel(format!("forcing DOF {dof} out of range 0..{n}")));
            }
        }
        self.damping.validate(n)
    }

    /// Diagonal mass and tridiagonal stiffness matrices.
    pub fn mass_and_stiffness(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dofs();
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.masses));
        let k = &self.story_stiffnesses;
        let mut kk = DMatrix::zeros(n, n);
        for i in 0..n {
            kk[(i, i)] = k[i] + if i + 1 < n { k[i + 1] } else { 0.0 };
            if i + 1 < n {
                kk[(i, i + 1)] = -k[i + 1];
                kk[(i + 1, i)] = -k[i + 1];
            }
        }
        (m, kk)
    }
}

fn undamped_modes(mass: &[f64], k: &DMatrix<f64>) -> Result<ModalProperties> {
    let n = mass.len();
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * k[(i, j)] * inv_sqrt[j]);
    let (vals, vecs) = symmetric_eigen(&a)?;
    let mut frequencies = Vec::with_capacity(n);
    let mut shapes = DMatrix::zeros(n, n);
    for (j, &lambda) in vals.iter().enumerate() {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Numerical(format!(
                "non-positive eigenvalue {lambda:.3e} in modal analysis"
            )));
        }
        frequencies.push(lambda.sqrt());
        let mut col = DVector::from_fn(n, |i, _| vecs[(i, j)] * inv_sqrt[i]);
        // Sign convention: the largest-magnitude component is positive.
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        shapes.set_column(j, &col);
    }
    Ok(ModalProperties {
        frequencies,
        shapes,
    })
}

/// Undamped modal analysis `K φ = ω² M φ` with `φᵀ M φ = 1`.
pub fn modal_analysis(model: &ShearBuildingModel) -> Result<ModalProperties> {
    model.validate()?;
    let (_, k) = model.mass_and_stiffness();
    undamped_modes(&model.masses, &k)
}

/// Assembles `M`, `K` and `C`.
pub fn assemble_matrices(model: &ShearBuildingModel) -> Result<StructuralMatrices> {
    model.validate()?;
    let (m, k) = model.mass_and_stiffness();
    let n = model.dofs();
    let c = match &model.damping {
        DampingSpec::Rayleigh { alpha, beta } => &k * *alpha + &m * *beta,
        DampingSpec::ModalRatios { zeta } => modal_damping(&model.masses, &k, zeta)?,
        DampingSpec::ViscousRatio { zeta } => modal_damping(&model.masses, &k, &vec![*zeta; n])?,
    };
    Ok(StructuralMatrices {
        mass: m,
        stiffness: k,
        damping: c,
    })
}

/// `C = Σ_i 2 ζ_i ω_i M φ_i φ_iᵀ M / (φ_iᵀ M φ_i)`.
fn modal_damping(mass: &[f64], k: &DMatrix<f64>, zeta: &[f64]) -> Result<DMatrix<f64>> {
    let n = mass.len();
    let mut c = DMatrix::zeros(n, n);
    if zeta.iter().all(|z| *z == 0.0) {
        return Ok(c);
    }
    let modes = undamped_modes(mass, k)?;
    for (i, (&z, &w)) in zeta.iter().zip(&modes.frequencies).enumerate() {
        if z == 0.0 {
            continue;
        }
        let mphi = DVector::from_fn(n, |r, _| mass[r] * modes.shapes[(r, i)]);
        let gen_mass: f64 = (0..n).map(|r| modes.shapes[(r, i)] * mphi[r]).sum();
        c += &mphi * mphi.transpose() * (2.0 * z * w / gen_mass);
    }
    crate::linalg::symmetrize(&mut c);
    Ok(c)
}
