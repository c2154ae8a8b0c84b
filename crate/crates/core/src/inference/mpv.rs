use serde::{Deserialize, Serialize};

use super::optimize::{minimize, NelderMeadOptions};
use super::{ParameterSplit, Transform, UpdatingProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpvOptions {
    /// Stop when `‖ΔΘ‖/‖Θ‖ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub inner: NelderMeadOptions,
}

impl Default for MpvOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            inner: NelderMeadOptions::default(),
        }
    }
}

/// Outcome of the alternating search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpvResult {
    pub mpv: ParameterSplit,
    pub converged: bool,
    pub iterations: usize,
    /// `L(θ̂,φ̂) = -ln p(Y|θ̂,φ̂) - ln p(θ̂,φ̂)`.
    pub neg_log_posterior: f64,
    /// Joint objective after each outer iteration.
    pub trace: Vec<f64>,
    /// Relative parameter change after each outer iteration.
    pub conv: Vec<f64>,
    pub evaluations: usize,
}

fn initial_steps(entries: &[super::ParameterInfo], x: &[f64]) -> Vec<f64> {
    entries
        .iter()
        .zip(x)
        .map(|(e, &v)| match e.transform {
            Transform::Log => 0.3,
            Transform::Identity => {
                let (lo, hi) = e.prior.bounds();
                if v != 0.0 {
                    0.05 * v.abs()
                } else {
                    0.01 * (hi - lo)
                }
            }
        })
        .collect()
}

/// Later simplices are sized from the previous move, bounded by the first step.
fn adapt(step0: &[f64], delta: &[f64]) -> Vec<f64> {
    step0
        .iter()
        .zip(delta)
        .map(|(s, d)| (4.0 * d.abs()).clamp(1e-4 * s, *s))
        .collect()
}

/// Alternating minimization of `L(θ|φ)` and `L(φ|θ)` until the relative
/// parameter change drops below `tol`.
pub fn find_mpv(problem: &UpdatingProblem<'_>, init: &ParameterSplit, opts: &MpvOptions) -> Result<MpvResult> {
    let map = problem.map().clone();
    if init.map != map {
        return Err(Error::InvalidArgument("initial values use a different parameter map".into()));
    }
    if !map.priors().contains(&init.joined()) {
        return Err(Error::Initialization("initial point lies outside the prior support".into()));
    }
    let mut theta = init.theta.clone();
    let mut phi = problem.class().kernel.canonical_phi(&init.phi);
    let l0 = problem.neg_log_posterior(&theta, &phi);
    if !l0.is_finite() {
        return Err(Error::Initialization(format!("objective is {l0} at the initial point")));
    }
    let te = map.theta_entries().to_vec();
    let pe = map.phi_entries().to_vec();
    let to_u = |e: &[super::ParameterInfo], x: &[f64]| -> Vec<f64> { e.iter().zip(x).map(|(e, v)| e.transform.forward(*v)).collect() };
    let from_u = |e: &[super::ParameterInfo], u: &[f64]| -> Vec<f64> { e.iter().zip(u).map(|(e, v)| e.transform.inverse(*v)).collect() };
    let theta_step0 = initial_steps(&te, &theta);
    let phi_step0 = initial_steps(&pe, &phi);
    let mut theta_step = theta_step0.clone();
    let mut phi_step = phi_step0.clone();

    let mut trace = Vec::new();
    let mut conv_hist = Vec::new();
    let mut evaluations = 1usize;
    let mut converged = false;
    let mut iterations = 0;
    let mut current = l0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let before: Vec<f64> = theta.iter().chain(&phi).copied().collect();

        // θ half-step with K(φ) factorized once.
        let mut theta_u_delta = vec![0.0; theta.len()];
        if !theta.is_empty() {
            let cov = problem.covariance(&phi)?;
            let u0 = to_u(&te, &theta);
            let m = minimize(
                |u: &[f64]| problem.conditional_theta_with(&cov, &from_u(&te, u)),
                &u0,
                &theta_step,
                &opts.inner,
            );
            evaluations += m.evals;
            theta_u_delta = m.x.iter().zip(&u0).map(|(a, b)| a - b).collect();
            theta = from_u(&te, &m.x);
        }

        // φ half-step with the residual fixed.
        let r = problem.residual(&theta)?;
        let v0 = to_u(&pe, &phi);
        let m = minimize(
            |u: &[f64]| problem.conditional_phi_with(&r, &from_u(&pe, u)),
            &v0,
            &phi_step,
            &opts.inner,
        );
        evaluations += m.evals;
        let phi_u_delta: Vec<f64> = m.x.iter().zip(&v0).map(|(a, b)| a - b).collect();
        phi = problem.class().kernel.canonical_phi(&from_u(&pe, &m.x));

        current = problem.neg_log_posterior(&theta, &phi);
        trace.push(current);
        let after: Vec<f64> = theta.iter().chain(&phi).copied().collect();
        let diff: f64 = after.iter().zip(&before).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = before.iter().map(|v| v * v).sum::<f64>().sqrt();
        let conv = diff / norm;
        conv_hist.push(conv);
        log::debug!("mpv iteration {iterations}: L = {current:.10e}, conv = {conv:.3e}");
        if conv.is_finite() && conv <= opts.tol {
            converged = true;
            break;
        }
        theta_step = adapt(&theta_step0, &theta_u_delta);
        phi_step = adapt(&phi_step0, &phi_u_delta);
    }
    Ok(MpvResult {
        mpv: ParameterSplit::new(theta, phi, map)?,
        converged,
        iterations,
        neg_log_posterior: current,
        trace,
        conv: conv_hist,
        evaluations,
    })
}
