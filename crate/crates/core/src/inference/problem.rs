use serde::{Deserialize, Serialize};

use super::likelihood::{gaussian_log_density, ErrorCovariance};
use super::{ParameterInfo, ParameterMap, ParameterSplit, Prior, Transform, TruncationPolicy};
use crate::dynamics::{discretize, DampingSpec, ShearBuildingModel, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::kernels::{AuxiliaryGrid, KernelConfig, KernelFamily, NOISE_NAME};
use crate::linalg::LN_2PI;

/// What an unknown structural parameter controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuralParameter {
    /// Story stiffness in N/m.
    Stiffness { story: usize },
    /// Dimensionless multiplier of the template's story stiffness.
    StiffnessRatio { story: usize },
    /// Damping ratio of one mode (modal or viscous damping templates).
    DampingRatio { mode: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownParameter {
    pub name: String,
    pub kind: StructuralParameter,
    pub prior: Prior,
    pub init: f64,
}

/// Structural model family: a template with some entries left unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModelClass {
    pub template: ShearBuildingModel,
    pub unknowns: Vec<UnknownParameter>,
}

impl StructuralModelClass {
    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        let n = self.template.dofs();
        for u in &self.unknowns {
            u.prior.validate(&u.name)?;
            if !u.prior.contains(u.init) {
                return Err(Error::InvalidArgument(format!(
                    "initial value {} of '{}' lies outside its prior",
                    u.init, u.name
                )));
            }
            match u.kind {
                StructuralParameter::Stiffness { story } | StructuralParameter::StiffnessRatio { story } => {
                    if story >= n {
                        return Err(Error::InvalidArgument(format!(
                            "'{}' refers to story {story} of a {n}-story model",
                            u.name
                        )));
                    }
                }
                StructuralParameter::DampingRatio { mode } => {
                    if mode >= n {
                        return Err(Error::InvalidArgument(format!(
                            "'{}' refers to mode {mode} of a {n}-mode model",
                            u.name
                        )));
                    }
                    if matches!(self.template.damping, DampingSpec::Rayleigh { .. }) {
                        return Err(Error::InvalidArgument(format!(
                            "'{}' needs a modal or viscous damping template",
                            u.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn infos(&self) -> Vec<ParameterInfo> {
        self.unknowns
            .iter()
            .map(|u| ParameterInfo {
                name: u.name.clone(),
                unit: match u.kind {
                    StructuralParameter::Stiffness { .. } => "N/m".into(),
                    _ => "-".into(),
                },
                transform: Transform::Identity,
                prior: u.prior,
            })
            .collect()
    }

    pub fn initial_theta(&self) -> Vec<f64> {
        self.unknowns.iter().map(|u| u.init).collect()
    }

    /// Template with `θ` substituted.
    pub fn instantiate(&self, theta: &[f64]) -> Result<ShearBuildingModel> {
        if theta.len() != self.unknowns.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} structural parameters, got {}",
                self.unknowns.len(),
                theta.len()
            )));
        }
        let mut m = self.template.clone();
        for (u, &v) in self.unknowns.iter().zip(theta) {
            match u.kind {
                StructuralParameter::Stiffness { story } => m.story_stiffnesses[story] = v,
                StructuralParameter::StiffnessRatio { story } => {
                    m.story_stiffnesses[story] = self.template.story_stiffnesses[story] * v
                }
                StructuralParameter::DampingRatio { mode } => match &mut m.damping {
                    DampingSpec::ModalRatios { zeta } => zeta[mode] = v,
                    DampingSpec::ViscousRatio { zeta } if m.masses.len() == 1 => *zeta = v,
                    DampingSpec::ViscousRatio { zeta } => {
                        let mut z = vec![*zeta; m.masses.len()];
                        z[mode] = v;
                        m.damping = DampingSpec::ModalRatios { zeta: z };
                    }
                    DampingSpec::Rayleigh { .. } => {
                        return Err(Error::InvalidArgument("damping ratio unknown on a Rayleigh template".into()))
                    }
                },
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// Prior and starting value of one kernel hyperparameter role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub prior: Prior,
    pub init: f64,
}

/// Kernel family of a model class with priors per hyperparameter role. MMTE
/// components share the role priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default = "one")]
    pub order: usize,
    #[serde(default)]
    pub variance: Option<HyperPrior>,
    #[serde(default)]
    pub inv_length_sq: Option<HyperPrior>,
    #[serde(default)]
    pub frequency: Option<HyperPrior>,
    pub noise: HyperPrior,
    /// Per-component starting frequencies for MMTE (overrides `frequency.init`).
    #[serde(default)]
    pub frequency_init: Vec<f64>,
}

fn one() -> usize {
    1
}

impl KernelSpec {
    pub fn gwn(noise: HyperPrior) -> Self {
        Self {
            family: KernelFamily::Gwn,
            order: 1,
            variance: None,
            inv_length_sq: None,
            frequency: None,
            noise,
            frequency_init: vec![],
        }
    }

    fn role(&self, name: &str, r: Option<HyperPrior>) -> Result<HyperPrior> {
        r.ok_or_else(|| Error::InvalidArgument(format!("{} kernel needs a '{name}' prior", self.family)))
    }

    /// `(role prior, initial value)` per φ entry in canonical order, noise last.
    fn roles(&self) -> Result<Vec<(String, HyperPrior)>> {
        let names = self.family.param_names(self.order);
        let mut out = Vec::with_capacity(names.len() + 1);
        match self.family {
            KernelFamily::Gwn => {}
            KernelFamily::Se => {
                out.push((names[0].clone(), self.role("variance", self.variance)?));
                out.push((names[1].clone(), self.role("inv_length_sq", self.inv_length_sq)?));
            }
            KernelFamily::Pe => {
                out.push((names[0].clone(), self.role("variance", self.variance)?));
                out.push((names[1].clone(), self.role("inv_length_sq", self.inv_length_sq)?));
                out.push((names[2].clone(), self.role("frequency", self.frequency)?));
            }
            KernelFamily::Mmte => {
                if self.order == 0 {
                    return Err(Error::InvalidArgument("MMTE order must be at least 1".into()));
                }
                if !self.frequency_init.is_empty() && self.frequency_init.len() != self.order {
                    return Err(Error::InvalidArgument(format!(
                        "{} starting frequencies for MMTE order {}",
                        self.frequency_init.len(),
                        self.order
                    )));
                }
                let v = self.role("variance", self.variance)?;
                let l = self.role("inv_length_sq", self.inv_length_sq)?;
                let w = self.role("frequency", self.frequency)?;
                let mut inits: Vec<f64> = if self.frequency_init.is_empty() {
                    vec![w.init; self.order]
                } else {
                    self.frequency_init.clone()
                };
                inits.sort_by(f64::total_cmp);
                for k in 0..self.order {
                    out.push((names[3 * k].clone(), v));
                    out.push((names[3 * k + 1].clone(), HyperPrior { prior: w.prior, init: inits[k] }));
                    out.push((names[3 * k + 2].clone(), l));
                }
            }
        }
        out.push((NOISE_NAME.to_string(), self.noise));
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.roles()? {
            r.prior.validate(&name)?;
            if r.prior.bounds().0 < 0.0 {
                return Err(Error::InvalidArgument(format!("prior of '{name}' must be non-negative")));
            }
            if !(r.init > 0.0) || !r.prior.contains(r.init) {
                return Err(Error::InvalidArgument(format!(
                    "initial value {} of '{name}' must be positive and inside its prior",
                    r.init
                )));
            }
        }
        Ok(())
    }

    pub fn infos(&self) -> Result<Vec<ParameterInfo>> {
        Ok(self
            .roles()?
            .into_iter()
            .map(|(name, r)| ParameterInfo {
                name,
                unit: String::new(),
                transform: Transform::Log,
                prior: r.prior,
            })
            .collect())
    }

    pub fn initial_phi(&self) -> Result<Vec<f64>> {
        Ok(self.roles()?.into_iter().map(|(_, r)| r.init).collect())
    }

    /// Kernel for a `φ` vector `[params…, σ_n²]`.
    pub fn config(&self, phi: &[f64]) -> Result<KernelConfig> {
        let (noise, params) = phi
            .split_last()
            .ok_or_else(|| Error::InvalidArgument("empty kernel parameter vector".into()))?;
        KernelConfig::new(self.family, params.to_vec(), *noise)
    }

    /// `φ` with MMTE components sorted by ascending frequency.
    pub fn canonical_phi(&self, phi: &[f64]) -> Vec<f64> {
        match self.config(phi) {
            Ok(k) => k.params().iter().copied().chain(std::iter::once(k.noise_floor())).collect(),
            Err(_) => phi.to_vec(),
        }
    }
}

/// Model class `M_p`: structural family, kernel family and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClass {
    pub id: String,
    pub structure: StructuralModelClass,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub truncation: TruncationPolicy,
}

impl ModelClass {
    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        self.kernel.validate()?;
        self.truncation.validate()?;
        self.parameter_map().map(|_| ())
    }

    pub fn parameter_map(&self) -> Result<ParameterMap> {
        ParameterMap::new(self.structure.infos(), self.kernel.infos()?)
    }

    pub fn initial_split(&self) -> Result<ParameterSplit> {
        ParameterSplit::new(self.structure.initial_theta(), self.kernel.initial_phi()?, self.parameter_map()?)
    }
}

/// A model class bound to training rows of a dataset.
#[derive(Debug, Clone)]
pub struct UpdatingProblem<'a> {
    class: &'a ModelClass,
    dataset: &'a TimeSeriesDataset,
    rows: Vec<usize>,
    grid: AuxiliaryGrid,
    observed: Vec<f64>,
    map: ParameterMap,
}

impl<'a> UpdatingProblem<'a> {
    /// Trains on the given dataset rows (strictly increasing).
    pub fn new(class: &'a ModelClass, dataset: &'a TimeSeriesDataset, rows: Vec<usize>) -> Result<Self> {
        class.validate()?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        if rows.windows(2).any(|w| w[1] <= w[0]) || *rows.last().unwrap() >= dataset.len() {
            return Err(Error::InvalidArgument("training rows must be increasing and inside the record".into()));
        }
        if class.structure.template.observed_dofs.len() != dataset.n_outputs() {
            return Err(Error::InvalidArgument(format!(
                "model observes {} DOFs but the dataset has {} channels",
                class.structure.template.observed_dofs.len(),
                dataset.n_outputs()
            )));
        }
        let grid = AuxiliaryGrid::from_rows(dataset.dt, &rows, dataset.n_outputs())?;
        let observed = dataset.stacked_output(&rows);
        Ok(Self {
            class,
            dataset,
            rows,
            grid,
            observed,
            map: class.parameter_map()?,
        })
    }

    /// Trains on the first `n_train` samples.
    pub fn prefix(class: &'a ModelClass, dataset: &'a TimeSeriesDataset, n_train: usize) -> Result<Self> {
        Self::new(class, dataset, (0..n_train.min(dataset.len())).collect())
    }

    pub fn class(&self) -> &'a ModelClass {
        self.class
    }

    pub fn dataset(&self) -> &'a TimeSeriesDataset {
        self.dataset
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn grid(&self) -> &AuxiliaryGrid {
        &self.grid
    }

    pub fn map(&self) -> &ParameterMap {
        &self.map
    }

    /// Number of scalar observations `n·N_o`.
    pub fn n_data(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    /// Stacked model response `f(X;θ)` at the training rows.
    pub fn response(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let model = self.class.structure.instantiate(theta)?;
        let last = *self.rows.last().unwrap();
        let input = &self.dataset.input_history()[..=last];
        let f = discretize(&model, self.dataset.dt)?.response(input, &model.observed_dofs, None)?;
        Ok(crate::dynamics::stack_rows(&f, &self.rows))
    }

    pub fn residual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let f = self.response(theta)?;
        Ok(self.observed.iter().zip(&f).map(|(y, f)| y - f).collect())
    }

    pub fn kernel(&self, phi: &[f64]) -> Result<KernelConfig> {
        self.class.kernel.config(phi)
    }

    pub fn covariance(&self, phi: &[f64]) -> Result<ErrorCovariance> {
        ErrorCovariance::new(&self.kernel(phi)?, &self.grid, &self.class.truncation)
    }

    pub fn ln_prior_theta(&self, theta: &[f64]) -> f64 {
        self.map.theta_entries().iter().zip(theta).map(|(e, x)| e.prior.ln_pdf(*x)).sum()
    }

    pub fn ln_prior_phi(&self, phi: &[f64]) -> f64 {
        self.map.phi_entries().iter().zip(phi).map(|(e, x)| e.prior.ln_pdf(*x)).sum()
    }

    pub fn log_likelihood(&self, theta: &[f64], phi: &[f64]) -> Result<f64> {
        let r = self.residual(theta)?;
        gaussian_log_density(&self.kernel(phi)?, &self.grid, &r, &self.class.truncation)
    }

    /// `L(θ,φ) = -ln p(Y|θ,φ) - ln p(θ,φ)`; `+inf` outside the prior or on numerical failure.
    pub fn neg_log_posterior(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let lp = self.ln_prior_theta(theta) + self.ln_prior_phi(phi);
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        match self.log_likelihood(theta, phi) {
            Ok(ll) if ll.is_finite() => -ll - lp,
            _ => f64::INFINITY,
        }
    }

    /// `L(θ|φ) = ½ rᵀK⁻¹r - ln p(θ)` (the `ln|K|` term omitted).
    pub fn neg_log_conditional_theta(&self, theta: &[f64], phi: &[f64]) -> Result<f64> {
        let cov = self.covariance(phi)?;
        Ok(self.conditional_theta_with(&cov, theta))
    }

    pub(crate) fn conditional_theta_with(&self, cov: &ErrorCovariance, theta: &[f64]) -> f64 {
        let lp = self.ln_prior_theta(theta);
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        match self.residual(theta) {
            Ok(r) => {
                let q = cov.quad_form(&r);
                if q.is_finite() {
                    0.5 * q - lp
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Offset with `L(θ|φ) + c = L(θ,φ)`: `½ln|K| + (N/2)ln 2π - ln p(φ)`.
    pub fn conditional_theta_constant(&self, cov: &ErrorCovariance, phi: &[f64]) -> f64 {
        0.5 * cov.log_det() + 0.5 * self.n_data() as f64 * LN_2PI - self.ln_prior_phi(phi)
    }

    /// `L(φ|θ) = ½ln|K| + ½ rᵀK⁻¹r - ln p(φ)`.
    pub fn neg_log_conditional_phi(&self, phi: &[f64], theta: &[f64]) -> Result<f64> {
        let r = self.residual(theta)?;
        Ok(self.conditional_phi_with(&r, phi))
    }

    pub(crate) fn conditional_phi_with(&self, residual: &[f64], phi: &[f64]) -> f64 {
        let lp = self.ln_prior_phi(phi);
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let Ok(k) = self.kernel(phi) else {
            return f64::INFINITY;
        };
        match gaussian_log_density(&k, &self.grid, residual, &self.class.truncation) {
            Ok(ld) if ld.is_finite() => -(ld + 0.5 * self.n_data() as f64 * LN_2PI) - lp,
            _ => f64::INFINITY,
        }
    }

    /// Offset with `L(φ|θ) + c = L(θ,φ)`: `(N/2)ln 2π - ln p(θ)`.
    pub fn conditional_phi_constant(&self, theta: &[f64]) -> f64 {
        0.5 * self.n_data() as f64 * LN_2PI - self.ln_prior_theta(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{synthesize_dataset, GwnExcitation};

    fn class(kernel: KernelSpec) -> ModelClass {
        ModelClass {
            id: "test".into(),
            structure: StructuralModelClass {
                template: ShearBuildingModel::sdof(1.0, 5.0, 0.04).unwrap(),
                unknowns: vec![UnknownParameter {
                    name: "k".into(),
                    kind: StructuralParameter::Stiffness { story: 0 },
                    prior: Prior::Uniform { lo: 1.0, hi: 10.0 },
                    init: 4.0,
                }],
            },
            kernel,
            truncation: TruncationPolicy::default(),
        }
    }

    fn hp(lo: f64, hi: f64, init: f64) -> HyperPrior {
        HyperPrior {
            prior: Prior::LogUniform { lo, hi },
            init,
        }
    }

    fn se_spec() -> KernelSpec {
        KernelSpec {
            family: KernelFamily::Se,
            order: 1,
            variance: Some(hp(1e-6, 10.0, 0.1)),
            inv_length_sq: Some(hp(1e-3, 1e3, 1.0)),
            frequency: None,
            noise: hp(1e-8, 1.0, 1e-3),
            frequency_init: vec![],
        }
    }

    fn data() -> TimeSeriesDataset {
        let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
        synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 11 }, 0.01, 3.0, Some(0.01)).unwrap()
    }

    #[test]
    fn conditionals_differ_from_joint_by_constants() {
        let c = class(se_spec());
        let d = data();
        let p = UpdatingProblem::prefix(&c, &d, 200).unwrap();
        let phi = vec![0.05, 2.0, 1e-3];
        let cov = p.covariance(&phi).unwrap();
        let ct = p.conditional_theta_constant(&cov, &phi);
        for th in [4.0, 5.5] {
            let joint = p.neg_log_posterior(&[th], &phi);
            let lt = p.neg_log_conditional_theta(&[th], &phi).unwrap();
            assert!((lt + ct - joint).abs() < 1e-8 * joint.abs());
        }
        for phi2 in [vec![0.05, 2.0, 1e-3], vec![0.2, 0.5, 1e-2]] {
            let joint = p.neg_log_posterior(&[4.5], &phi2);
            let lp = p.neg_log_conditional_phi(&phi2, &[4.5]).unwrap();
            assert!((lp + p.conditional_phi_constant(&[4.5]) - joint).abs() < 1e-8 * joint.abs());
        }
        assert_eq!(p.neg_log_conditional_theta(&[20.0], &phi).unwrap(), f64::INFINITY);
    }

    #[test]
    fn conditional_theta_zero_at_truth_without_noise() {
        let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.04).unwrap();
        let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 2 }, 0.01, 1.0, None).unwrap();
        let c = class(KernelSpec::gwn(hp(1e-8, 1.0, 1.0)));
        let p = UpdatingProblem::prefix(&c, &d, 100).unwrap();
        let v = p.neg_log_conditional_theta(&[5.0], &[1.0]).unwrap();
        // ½·0 - ln p(θ) with a uniform prior on [1, 10].
        assert!((v - 9f64.ln()).abs() < 1e-12);
        // With K = I the objective is half the squared residual norm.
        let r = p.residual(&[4.0]).unwrap();
        let half: f64 = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
        let v4 = p.neg_log_conditional_theta(&[4.0], &[1.0]).unwrap();
        assert!((v4 - half - 9f64.ln()).abs() < 1e-10 * half.max(1.0));
    }

    #[test]
    fn doubling_variance_with_zero_residual_increases_phi_objective() {
        let c = class(se_spec());
        let d = data();
        let p = UpdatingProblem::prefix(&c, &d, 100).unwrap();
        let zero = vec![0.0; 100];
        let a = p.conditional_phi_with(&zero, &[0.1, 1.0, 1e-3]);
        let b = p.conditional_phi_with(&zero, &[0.2, 1.0, 1e-3]);
        // The prior term changes by ln 2 for a log-uniform variance; the determinant term dominates.
        assert!(b - a > 0.0);
    }

    #[test]
    fn mmte_roles_and_instantiation() {
        let spec = KernelSpec {
            family: KernelFamily::Mmte,
            order: 2,
            variance: Some(hp(1e-6, 10.0, 0.1)),
            inv_length_sq: Some(hp(1e-3, 1e3, 1.0)),
            frequency: Some(hp(0.1, 50.0, 2.0)),
            noise: hp(1e-8, 1.0, 1e-3),
            frequency_init: vec![5.0, 1.0],
        };
        let c = class(spec);
        let map = c.parameter_map().unwrap();
        assert_eq!(map.names(), vec!["k", "sigma_f2_1", "omega_1", "inv_ell2_1", "sigma_f2_2", "omega_2", "inv_ell2_2", "sigma_n2"]);
        let s = c.initial_split().unwrap();
        assert_eq!(s.phi[1], 1.0);
        assert_eq!(s.phi[4], 5.0);
        let m = c.structure.instantiate(&[7.0]).unwrap();
        assert_eq!(m.story_stiffnesses, vec![7.0]);
        assert_eq!(c.kernel.canonical_phi(&[1.0, 9.0, 1.0, 2.0, 3.0, 1.0, 0.1]), vec![2.0, 3.0, 1.0, 1.0, 9.0, 1.0, 0.1]);
    }

    #[test]
    fn ratio_and_damping_unknowns() {
        let mut c = class(se_spec());
        c.structure.template = ShearBuildingModel::new(
            vec![1.0; 3],
            vec![10.0; 3],
            DampingSpec::ModalRatios { zeta: vec![0.02; 3] },
            vec![0],
            crate::dynamics::Excitation::Base,
        )
        .unwrap();
        c.structure.unknowns = vec![
            UnknownParameter {
                name: "theta_2".into(),
                kind: StructuralParameter::StiffnessRatio { story: 1 },
                prior: Prior::Uniform { lo: 0.5, hi: 1.5 },
                init: 1.0,
            },
            UnknownParameter {
                name: "zeta_3".into(),
                kind: StructuralParameter::DampingRatio { mode: 2 },
                prior: Prior::Uniform { lo: 0.0, hi: 0.2 },
                init: 0.02,
            },
        ];
        c.validate().unwrap();
        let m = c.structure.instantiate(&[0.9, 0.05]).unwrap();
        assert_eq!(m.story_stiffnesses, vec![10.0, 9.0, 10.0]);
        assert_eq!(m.damping, DampingSpec::ModalRatios { zeta: vec![0.02, 0.02, 0.05] });
        c.structure.unknowns[0].init = 2.0;
        assert!(c.validate().is_err());
    }
}
