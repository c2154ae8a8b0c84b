//! Experiment configuration (TOML, `schema_version = 1`).

use std::fmt;
use std::path::{Path, PathBuf};

use gpsid_core::dynamics::ShearBuildingModel;
use gpsid_core::inference::{KernelSpec, ModelClass, StructuralModelClass, TruncationPolicy, UnknownParameter};
use gpsid_core::kernels::KernelFamily;
use gpsid_core::sampler::TmcmcConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelBlock,
    pub kernel: KernelSpec,
    pub data: DataBlock,
    #[serde(default)]
    pub inference: InferenceBlock,
    #[serde(default)]
    pub prediction: PredictionBlock,
    #[serde(default)]
    pub selection: Option<SelectionBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub template: ShearBuildingModel,
    #[serde(default)]
    pub unknowns: Vec<UnknownParameter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthesis: Option<SynthesisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub truth: ShearBuildingModel,
    /// Standard deviation of the GWN input.
    #[serde(default = "unit")]
    pub input_std: f64,
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub noise_std: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Mpv,
    Tmcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceBlock {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub tmcmc: TmcmcBlock,
    #[serde(default)]
    pub truncation: TruncationPolicy,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    100
}

impl Default for InferenceBlock {
    fn default() -> Self {
        Self {
            method: Method::Mpv,
            tol: default_tol(),
            max_iter: default_max_iter(),
            tmcmc: TmcmcBlock::default(),
            truncation: TruncationPolicy::default(),
        }
    }
}

/// Sampler settings; the seed comes from the config seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmcmcBlock {
    pub n_samples: usize,
    pub target_weight_cov: f64,
    pub proposal_scale: f64,
    pub max_stages: usize,
    pub chain_length: usize,
}

impl Default for TmcmcBlock {
    fn default() -> Self {
        let c = TmcmcConfig::new(1000, 0);
        Self {
            n_samples: c.n_samples,
            target_weight_cov: c.target_weight_cov,
            proposal_scale: c.proposal_scale,
            max_stages: c.max_stages,
            chain_length: c.chain_length,
        }
    }
}

impl TmcmcBlock {
    pub fn config(&self, seed: u64) -> TmcmcConfig {
        TmcmcConfig {
            n_samples: self.n_samples,
            target_weight_cov: self.target_weight_cov,
            proposal_scale: self.proposal_scale,
            max_stages: self.max_stages,
            chain_length: self.chain_length,
            seed,
        }
    }
}

/// Time intervals in seconds, half-open `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionBlock {
    /// Training interval; the whole record when absent.
    #[serde(default)]
    pub train: Option<[f64; 2]>,
    #[serde(default)]
    pub heldout: Option<[f64; 2]>,
    #[serde(default)]
    pub gaps: Vec<[f64; 2]>,
    /// Half-width of the reported bands in standard deviations.
    #[serde(default = "default_band")]
    pub band: f64,
}

fn default_band() -> f64 {
    2.0
}

impl Default for PredictionBlock {
    fn default() -> Self {
        Self {
            train: None,
            heldout: None,
            gaps: Vec::new(),
            band: default_band(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionBlock {
    #[serde(default)]
    pub candidates: Vec<Candidate>,
    /// MMTE orders scanned by BIC with the main kernel's priors.
    #[serde(default)]
    pub mmte_orders: Vec<usize>,
    /// Add the held-out log predictive to the log evidence.
    #[serde(default = "yes")]
    pub use_predictive: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub id: String,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match self.line {
            Some(l) => write!(f, "{tag}: line {l}: {}", self.message),
            None => write!(f, "{tag}: {}", self.message),
        }
    }
}

/// Parsed config plus the text it came from (for line lookups).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub path: PathBuf,
}

#[derive(Debug)]
pub struct ParseFailure {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ParseFailure {}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse(text: &str, path: &Path) -> Result<ExperimentConfig, ParseFailure> {
    toml::from_str(text).map_err(|e| ParseFailure {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().trim().to_string(),
    })
}

pub fn load(path: &Path) -> Result<LoadedConfig, ParseFailure> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseFailure {
        path: path.to_path_buf(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    let config = parse(&text, path)?;
    Ok(LoadedConfig {
        config,
        text,
        path: path.to_path_buf(),
    })
}

/// First line containing every needle, if any.
fn find_line(text: &str, needles: &[&str]) -> Option<usize> {
    text.lines()
        .position(|l| needles.iter().all(|n| l.contains(n)))
        .map(|i| i + 1)
}

impl LoadedConfig {
    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.config.data.path.as_deref().map(|p| self.resolve(p))
    }

    fn error(&self, needles: &[&str], message: impl Into<String>) -> Finding {
        Finding {
            severity: Severity::Error,
            line: find_line(&self.text, needles),
            message: message.into(),
        }
    }

    /// Structural, prior-support and unit checks. Never fails; problems are
    /// returned as findings.
    pub fn validate(&self) -> Vec<Finding> {
        let c = &self.config;
        let mut out = Vec::new();
        if c.schema_version != SCHEMA_VERSION {
            out.push(self.error(&["schema_version"], format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", c.schema_version)));
        }
        if let Err(e) = c.model.template.validate() {
            out.push(self.error(&["[model.template"], e.to_string()));
        }
        for u in &c.model.unknowns {
            if let Err(e) = u.prior.validate(&u.name) {
                out.push(self.error(&[&format!("\"{}\"", u.name)], e.to_string()));
            }
        }
        let structure = StructuralModelClass {
            template: c.model.template.clone(),
            unknowns: c.model.unknowns.clone(),
        };
        if c.model.template.validate().is_ok() {
            if let Err(e) = structure.validate() {
                out.push(self.error(&["[[model.unknowns]]"], e.to_string()));
            }
        }
        self.check_kernel(&c.kernel, "[kernel", &mut out);
        if let Some(sel) = &c.selection {
            for cand in &sel.candidates {
                self.check_kernel(&cand.kernel, &format!("\"{}\"", cand.id), &mut out);
            }
            if sel.mmte_orders.contains(&0) {
                out.push(self.error(&["mmte_orders"], "MMTE orders must be at least 1"));
            }
            if sel.use_predictive && c.prediction.heldout.is_none() {
                out.push(Finding {
                    severity: Severity::Warning,
                    line: find_line(&self.text, &["use_predictive"]).or_else(|| find_line(&self.text, &["[selection]"])),
                    message: "no prediction.heldout interval; models are ranked on the evidence alone".into(),
                });
            }
            if !sel.mmte_orders.is_empty() && c.kernel.family != KernelFamily::Mmte {
                out.push(self.error(&["mmte_orders"], "an MMTE order scan needs an MMTE main kernel"));
            }
        }
        if let Err(e) = c.inference.truncation.validate() {
            out.push(self.error(&["relative_threshold"], e.to_string()));
        }
        if let Err(e) = c.inference.tmcmc.config(c.seed).validate() {
            out.push(self.error(&["[inference.tmcmc"], e.to_string()));
        }
        if !(c.inference.tol > 0.0) || c.inference.max_iter == 0 {
            out.push(self.error(&["[inference"], "tol must be positive and max_iter at least 1"));
        }
        if !(c.prediction.band > 0.0 && c.prediction.band.is_finite()) {
            out.push(self.error(&["band"], format!("band {} must be positive", c.prediction.band)));
        }
        let duration = self.check_data(&mut out);
        self.check_splits(duration, &mut out);
        out
    }

    fn check_kernel(&self, k: &KernelSpec, anchor: &str, out: &mut Vec<Finding>) {
        if let Err(e) = k.validate() {
            let msg = e.to_string();
            // Name the offending role's line when the message names it.
            let role = ["variance", "inv_length_sq", "frequency", "noise"]
                .into_iter()
                .find(|r| msg.contains(r) || (*r == "noise" && msg.contains("sigma_n")));
            let line = role
                .and_then(|r| find_line(&self.text, &[r]))
                .or_else(|| find_line(&self.text, &[anchor]));
            out.push(Finding {
                severity: Severity::Error,
                line,
                message: msg,
            });
        }
    }

    /// Record duration in seconds when it can be determined.
    fn check_data(&self, out: &mut Vec<Finding>) -> Option<f64> {
        let d = &self.config.data;
        match (&d.path, &d.synthesis) {
            (Some(_), Some(_)) | (None, None) => {
                out.push(self.error(&["[data"], "give exactly one of data.path and data.synthesis"));
                None
            }
            (Some(_), None) => {
                let p = self.dataset_path().unwrap();
                match gpsid_core::dynamics::TimeSeriesDataset::load(&p) {
                    Ok(ds) => {
                        if ds.n_outputs() != self.config.model.template.observed_dofs.len() {
                            out.push(self.error(
                                &["observed_dofs"],
                                format!("model observes {} DOFs but {} has {} channels", self.config.model.template.observed_dofs.len(), p.display(), ds.n_outputs()),
                            ));
                        }
                        Some(ds.len() as f64 * ds.dt)
                    }
                    Err(e) => {
                        out.push(self.error(&["path"], format!("cannot load dataset: {e}")));
                        None
                    }
                }
            }
            (None, Some(s)) => {
                if let Err(e) = s.truth.validate() {
                    out.push(self.error(&["[data.synthesis.truth"], e.to_string()));
                }
                if s.truth.observed_dofs.len() != self.config.model.template.observed_dofs.len() {
                    out.push(self.error(&["observed_dofs"], "synthesis truth and model template observe different numbers of DOFs"));
                }
                if !(s.dt > 0.0 && s.dt.is_finite()) || !(s.duration > 0.0 && s.duration.is_finite()) {
                    out.push(self.error(&["dt"], format!("dt ({}) and duration ({}) must be positive", s.dt, s.duration)));
                    return None;
                }
                let ratio = s.duration / s.dt;
                if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 2.0 {
                    out.push(self.error(&["duration"], format!("duration {} s is not a whole number (>= 2) of {} s steps", s.duration, s.dt)));
                }
                if !(s.input_std > 0.0) || s.noise_std.is_some_and(|v| !(v >= 0.0)) {
                    out.push(self.error(&["input_std"], "input_std must be positive and noise_std non-negative"));
                }
                Some(s.duration)
            }
        }
    }

    fn check_splits(&self, duration: Option<f64>, out: &mut Vec<Finding>) {
        let p = &self.config.prediction;
        let mut check = |name: &str, iv: [f64; 2]| {
            if !(iv[0].is_finite() && iv[1].is_finite()) || iv[0] < 0.0 || iv[1] <= iv[0] {
                out.push(self.error(&[name], format!("{name} interval [{}, {}) is empty or negative", iv[0], iv[1])));
            } else if let Some(t) = duration {
                let beyond = iv.iter().copied().find(|&x| x > t + 1e-9);
                if let Some(x) = beyond {
                    out.push(self.error(&[name], format!("{name} time {x} s lies beyond the {t} s record")));
                }
            }
        };
        if let Some(t) = p.train {
            check("train", t);
        }
        if let Some(h) = p.heldout {
            check("heldout", h);
        }
        for g in &p.gaps {
            check("gaps", *g);
        }
        if let (Some(t), Some(h)) = (p.train, p.heldout) {
            if t[0] < h[1] && h[0] < t[1] {
                out.push(self.error(&["heldout"], "held-out interval overlaps the training interval"));
            }
        }
    }

    pub fn model_class(&self, id: &str, kernel: &KernelSpec) -> ModelClass {
        ModelClass {
            id: id.to_string(),
            structure: StructuralModelClass {
                template: self.config.model.template.clone(),
                unknowns: self.config.model.unknowns.clone(),
            },
            kernel: kernel.clone(),
            truncation: self.config.inference.truncation,
        }
    }

    pub fn main_class(&self) -> ModelClass {
        self.model_class(self.config.kernel.family.name(), &self.config.kernel)
    }
}
