//! Parameter maps, likelihood evaluation, MPV search and Laplace summaries.

mod laplace;
mod likelihood;
mod mpv;
mod optimize;
mod params;
mod problem;

pub use laplace::{central_hessian, hessian_steps, identify, IDENTIFIABILITY_RATIO, invert_hessian, laplace_covariance, laplace_from_objective, LaplaceSummary};
pub use likelihood::{gaussian_log_density, log_likelihood, truncated_spectral_form, CovarianceFactor, ErrorCovariance, TruncatedSpectralForm};
pub use mpv::{find_mpv, MpvOptions, MpvResult};
pub use optimize::{minimize, Minimum, NelderMeadOptions};
pub use params::{ParameterInfo, ParameterMap, ParameterSplit, Prior, PriorSpec, Transform, TruncationPolicy};
pub use problem::{HyperPrior, KernelSpec, ModelClass, StructuralModelClass, StructuralParameter, UnknownParameter, UpdatingProblem};
