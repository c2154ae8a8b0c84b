use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mpv::{find_mpv, MpvOptions};
use super::{ParameterMap, ParameterSplit, Transform, UpdatingProblem};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, symmetrize, LN_2PI};

/// Gaussian approximation of the posterior at the MPV.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceSummary {
    pub mpv: ParameterSplit,
    /// Covariance of `[θ; φ]` in natural units.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub neg_log_posterior_at_mpv: f64,
    pub log_likelihood_at_mpv: f64,
    /// False when the Hessian was not positive definite (pseudo-inverse used).
    pub identifiable: bool,
    /// `ln p(Y|Θ̂) + ln p(Θ̂) + (d/2) ln 2π + ½ ln|Σ̂|`; absent when not identifiable.
    pub log_evidence: Option<f64>,
    /// Parameters whose MPV sits against a prior bound. They are held fixed in
    /// the expansion: zero rows and columns in `covariance`, and `d` counts
    /// only the others.
    pub at_bound: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LaplaceRecord {
    names: Vec<String>,
    mpv: Vec<f64>,
    std_dev: Vec<f64>,
    /// Non-finite entries (a Hessian that could not be evaluated) are `null`.
    covariance: Vec<Vec<Option<f64>>>,
    converged: bool,
    iterations: usize,
    neg_log_posterior_at_mpv: f64,
    log_likelihood_at_mpv: f64,
    identifiable: bool,
    log_evidence: Option<f64>,
    #[serde(default)]
    at_bound: Vec<String>,
    parameter_map: ParameterMap,
}

impl LaplaceSummary {
    pub fn names(&self) -> Vec<String> {
        self.mpv.names()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn to_json(&self) -> String {
        let d = self.covariance.nrows();
        let rec = LaplaceRecord {
            names: self.names(),
            mpv: self.mpv.joined(),
            std_dev: self.std_devs(),
            covariance: (0..d)
                .map(|i| self.covariance.row(i).iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
            converged: self.converged,
            iterations: self.iterations,
            neg_log_posterior_at_mpv: self.neg_log_posterior_at_mpv,
            log_likelihood_at_mpv: self.log_likelihood_at_mpv,
            identifiable: self.identifiable,
            log_evidence: self.log_evidence,
            at_bound: self.at_bound.clone(),
            parameter_map: self.mpv.map.clone(),
        };
        serde_json::to_string_pretty(&rec).expect("summary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: LaplaceRecord = serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<laplace summary>".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let d = rec.mpv.len();
        if rec.covariance.len() != d || rec.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("covariance shape does not match the MPV".into()));
        }
        Ok(Self {
            mpv: ParameterSplit::from_joined(&rec.mpv, rec.parameter_map)?,
            covariance: DMatrix::from_fn(d, d, |i, j| rec.covariance[i][j].unwrap_or(f64::NAN)),
            converged: rec.converged,
            iterations: rec.iterations,
            neg_log_posterior_at_mpv: rec.neg_log_posterior_at_mpv,
            log_likelihood_at_mpv: rec.log_likelihood_at_mpv,
            identifiable: rec.identifiable,
            log_evidence: rec.log_evidence,
            at_bound: rec.at_bound,
        })
    }
}

/// `h_i = max(1e-4 |u_i|, 1e-6)`.
pub fn hessian_steps(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| (1e-4 * v.abs()).max(1e-6)).collect()
}

/// Central-difference Hessian of `f` at `u`, symmetrized.
pub fn central_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, u: &[f64], h: &[f64]) -> DMatrix<f64> {
    let d = u.len();
    let mut at = |du: &[(usize, f64)]| {
        let mut x = u.to_vec();
        for &(i, s) in du {
            x[i] += s;
        }
        f(&x)
    };
    let f0 = at(&[]);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = at(&[(i, h[i])]);
        let fm = at(&[(i, -h[i])]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = at(&[(i, h[i]), (j, h[j])]);
            let fpm = at(&[(i, h[i]), (j, -h[j])]);
            let fmp = at(&[(i, -h[i]), (j, h[j])]);
            let fmm = at(&[(i, -h[i]), (j, -h[j])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    symmetrize(&mut hess);
    hess
}

/// Smallest-to-largest eigenvalue ratio below which a Hessian is treated as
/// singular.
pub const IDENTIFIABILITY_RATIO: f64 = 1e-10;

/// Inverse of a symmetric Hessian. Falls back to the pseudo-inverse over the
/// well-conditioned positive eigenvalues when it is not positive definite
/// (`false` flag).
pub fn invert_hessian(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let d = h.nrows();
    if h.iter().any(|v| !v.is_finite()) {
        return Ok((DMatrix::from_element(d, d, f64::NAN), false));
    }
    let (vals, vecs) = symmetric_eigen(h)?;
    let lmax = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = IDENTIFIABILITY_RATIO * lmax;
    if vals.first().is_some_and(|&l| l > cut) {
        if let Some(ch) = h.clone().cholesky() {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            return Ok((inv, true));
        }
    }
    let mut inv = DMatrix::zeros(d, d);
    for (k, &l) in vals.iter().enumerate() {
        if l > cut {
            let v = vecs.column(k);
            inv += v * v.transpose() / l;
        }
    }
    symmetrize(&mut inv);
    Ok((inv, false))
}

/// Laplace approximation of `exp(-f)` at a minimizer given in transformed
/// coordinates. Returns the natural-unit covariance (delta method) and the
/// identifiability flag.
pub fn laplace_from_objective<F: FnMut(&[f64]) -> f64>(f: F, u_hat: &[f64], transforms: &[Transform]) -> Result<(DMatrix<f64>, bool)> {
    let h = central_hessian(f, u_hat, &hessian_steps(u_hat));
    let (cov_u, ok) = invert_hessian(&h)?;
    let jac: Vec<f64> = transforms
        .iter()
        .zip(u_hat)
        .map(|(t, u)| t.jacobian(t.inverse(*u)))
        .collect();
    let d = u_hat.len();
    let cov = DMatrix::from_fn(d, d, |i, j| jac[i] * cov_u[(i, j)] * jac[j]);
    Ok((cov, ok))
}

/// Laplace covariance at `at`, which should be a local minimum of `L(θ,φ)`.
pub fn laplace_covariance(problem: &UpdatingProblem<'_>, at: &ParameterSplit) -> Result<LaplaceSummary> {
    let map = problem.map();
    let nt = map.n_theta();
    let x = at.joined();
    let u = map.to_transformed(&x);
    let transforms: Vec<Transform> = map.entries().iter().map(|e| e.transform).collect();
    let objective = |uu: &[f64]| {
        let xx = map.from_transformed(uu);
        problem.neg_log_posterior(&xx[..nt], &xx[nt..])
    };
    let nlp = objective(&u);
    if !nlp.is_finite() {
        return Err(Error::Numerical(format!("objective is {nlp} at the expansion point")));
    }
    // A parameter whose difference stencil leaves the prior support is at a bound.
    let steps = hessian_steps(&u);
    let inside = |i: usize, s: f64| {
        let mut v = u.clone();
        v[i] += s;
        objective(&v).is_finite()
    };
    let free: Vec<usize> = (0..u.len()).filter(|&i| inside(i, steps[i]) && inside(i, -steps[i])).collect();
    let names = map.names();
    let at_bound: Vec<String> = (0..u.len()).filter(|i| !free.contains(i)).map(|i| names[i].clone()).collect();
    if !at_bound.is_empty() {
        log::warn!("held fixed at a prior bound in the Laplace expansion: {at_bound:?}");
    }
    let u_free: Vec<f64> = free.iter().map(|&i| u[i]).collect();
    let t_free: Vec<Transform> = free.iter().map(|&i| transforms[i]).collect();
    let sub = |uf: &[f64]| {
        let mut v = u.clone();
        for (&i, &x) in free.iter().zip(uf) {
            v[i] = x;
        }
        objective(&v)
    };
    let (cov_free, identifiable) = if free.is_empty() {
        (DMatrix::zeros(0, 0), false)
    } else {
        laplace_from_objective(sub, &u_free, &t_free)?
    };
    let mut cov = DMatrix::zeros(u.len(), u.len());
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            cov[(i, j)] = cov_free[(a, b)];
        }
    }
    let ll = problem.log_likelihood(&at.theta, &at.phi)?;
    let log_evidence = if identifiable {
        let det = cov_free.clone().cholesky().map(|c| c.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>());
        det.map(|ld| ll + map.priors().ln_density(&x) + 0.5 * free.len() as f64 * LN_2PI + 0.5 * ld)
    } else {
        None
    };
    Ok(LaplaceSummary {
        mpv: at.clone(),
        covariance: cov,
        converged: true,
        iterations: 0,
        neg_log_posterior_at_mpv: nlp,
        log_likelihood_at_mpv: ll,
        identifiable,
        log_evidence,
        at_bound,
    })
}

/// [`find_mpv`] followed by [`laplace_covariance`].
pub fn identify(problem: &UpdatingProblem<'_>, init: &ParameterSplit, opts: &MpvOptions) -> Result<LaplaceSummary> {
    let m = find_mpv(problem, init, opts)?;
    let mut s = laplace_covariance(problem, &m.mpv)?;
    s.converged = m.converged;
    s.iterations = m.iterations;
    Ok(s)
}
