//! Model-class ranking: posterior probabilities, held-out predictive scores and
//! BIC order selection for the MMTE kernel.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{peak_pick, periodogram, ResidualSeries, Spectrum};
use crate::dynamics::{modal_analysis, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::inference::{find_mpv, laplace_covariance, LaplaceSummary, ModelClass, MpvOptions, ParameterSplit, UpdatingProblem};
use crate::kernels::KernelFamily;
use crate::linalg::log_sum_exp;
use crate::prediction::structural_prediction;
use crate::sampler::PosteriorSamples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    Tmcmc,
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClassScore {
    pub model_id: String,
    /// `ln p(Y|X, M_p)`.
    pub log_evidence: f64,
    pub evidence_source: EvidenceSource,
    /// `ln p(Y_pred|Y, X, X_pred, M_p)`.
    #[serde(default)]
    pub log_posterior_predictive: Option<f64>,
    /// `ln P(M_p)`; `None` for equal priors over the candidate set.
    #[serde(default)]
    pub log_prior_prob: Option<f64>,
    #[serde(default)]
    pub bic: Option<f64>,
}

impl ModelClassScore {
    pub fn new(model_id: impl Into<String>, log_evidence: f64, evidence_source: EvidenceSource) -> Self {
        Self {
            model_id: model_id.into(),
            log_evidence,
            evidence_source,
            log_posterior_predictive: None,
            log_prior_prob: None,
            bic: None,
        }
    }

    /// Predictive term plus evidence (plus the prior when one is set).
    pub fn total(&self) -> Option<f64> {
        self.log_posterior_predictive
            .map(|p| p + self.log_evidence + self.log_prior_prob.unwrap_or(0.0))
    }
}

/// Normalized `P(M_p | data)` over the candidates, from the evidence (and the
/// held-out predictive term when `use_predictive`).
pub fn model_posterior_probabilities(scores: &[ModelClassScore], use_predictive: bool) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no model classes to rank".into()));
    }
    let with_prior = scores.iter().filter(|s| s.log_prior_prob.is_some()).count();
    if with_prior != 0 && with_prior != scores.len() {
        return Err(Error::InvalidArgument("model priors must be given for all classes or none".into()));
    }
    let terms = scores
        .iter()
        .map(|s| {
            let pred = if use_predictive {
                s.log_posterior_predictive.ok_or_else(|| {
                    Error::InvalidArgument(format!("'{}' has no posterior predictive score", s.model_id))
                })?
            } else {
                0.0
            };
            let t = s.log_evidence + pred + s.log_prior_prob.unwrap_or(0.0);
            if t.is_nan() || t == f64::INFINITY {
                return Err(Error::InvalidArgument(format!("'{}' has log score {t}", s.model_id)));
            }
            Ok(t)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Numerical("every model class has zero probability".into()));
    }
    let w: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / z).collect())
}

/// `ln p(Y_held | Y_train, θ, φ) = ln p(Y_train ∪ Y_held | θ, φ) - ln p(Y_train | θ, φ)`.
pub struct PredictiveScorer<'p, 'a> {
    train: &'p UpdatingProblem<'a>,
    joint: UpdatingProblem<'a>,
}

impl<'p, 'a> PredictiveScorer<'p, 'a> {
    pub fn new(train: &'p UpdatingProblem<'a>, heldout_rows: &[usize]) -> Result<Self> {
        if heldout_rows.is_empty() {
            return Err(Error::InvalidArgument("no held-out samples".into()));
        }
        let mut rows: Vec<usize> = train.rows().iter().chain(heldout_rows).copied().collect();
        rows.sort_unstable();
        let before = rows.len();
        rows.dedup();
        if rows.len() != before {
            return Err(Error::InvalidArgument("held-out rows overlap the training rows".into()));
        }
        let joint = UpdatingProblem::new(train.class(), train.dataset(), rows)?;
        Ok(Self { train, joint })
    }

    pub fn log_density(&self, theta: &[f64], phi: &[f64]) -> Result<f64> {
        Ok(self.joint.log_likelihood(theta, phi)? - self.train.log_likelihood(theta, phi)?)
    }
}

/// `ln[(1/N_s) Σ_m p(Y_held | Y_train, θ_m, φ_m)]` over posterior samples.
/// Components that cannot be evaluated count as zero density.
pub fn log_posterior_predictive_score(
    samples: &PosteriorSamples,
    train: &UpdatingProblem<'_>,
    heldout_rows: &[usize],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no posterior samples".into()));
    }
    let nt = train.map().n_theta();
    if samples.dim() != train.map().len() {
        return Err(Error::InvalidArgument("samples do not match the model class".into()));
    }
    let scorer = PredictiveScorer::new(train, heldout_rows)?;
    let n = samples.len() as f64;
    let terms: Vec<f64> = samples
        .unique()
        .par_iter()
        .map(|&(i, mult)| {
            let x = samples.sample(i);
            let l = scorer.log_density(&x[..nt], &x[nt..]).unwrap_or_else(|e| {
                log::warn!("predictive density of sample {i} failed: {e}");
                f64::NEG_INFINITY
            });
            l + (mult as f64 / n).ln()
        })
        .collect();
    let s = log_sum_exp(&terms);
    if s == f64::NEG_INFINITY {
        log::warn!("every predictive component underflowed");
    }
    Ok(s)
}

/// Predictive score at the MPV only.
pub fn map_log_predictive(summary: &LaplaceSummary, train: &UpdatingProblem<'_>, heldout_rows: &[usize]) -> Result<f64> {
    PredictiveScorer::new(train, heldout_rows)?.log_density(&summary.mpv.theta, &summary.mpv.phi)
}

/// `ln p(Y|Θ̂) - ½ n_params ln(n_data)`, where `n_params` already includes the
/// extra 1 (`N_θ + N_φ + 1`).
pub fn bic_score(log_lik_at_mpv: f64, n_params: usize, n_data: usize) -> f64 {
    log_lik_at_mpv - 0.5 * n_params as f64 * (n_data as f64).ln()
}

/// Parameter count used by [`bic_score`] for a model class.
pub fn bic_parameter_count(problem: &UpdatingProblem<'_>) -> usize {
    problem.map().n_theta() + problem.map().n_phi() + 1
}

#[derive(Debug, Clone)]
pub struct OrderCandidate {
    pub order: usize,
    pub frequency_init: Vec<f64>,
    pub summary: LaplaceSummary,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct OrderSelection {
    pub candidates: Vec<OrderCandidate>,
    pub failures: Vec<(usize, String)>,
    pub chosen: usize,
}

impl OrderSelection {
    pub fn to_table(&self) -> String {
        let mut s = String::from("order,log_likelihood,n_params,bic,converged,chosen\n");
        for c in &self.candidates {
            let _ = writeln!(
                s,
                "{},{:.10e},{},{:.10e},{},{}",
                c.order,
                c.summary.log_likelihood_at_mpv,
                c.summary.mpv.map.len() + 1,
                c.bic,
                c.summary.converged,
                c.order == self.chosen
            );
        }
        s
    }
}

fn summed_spectrum(series: &[ResidualSeries]) -> Result<Spectrum> {
    let mut total: Option<Spectrum> = None;
    for s in series {
        let sp = periodogram(s)?;
        match &mut total {
            None => total = Some(sp),
            Some(t) => t.power.iter_mut().zip(&sp.power).for_each(|(a, b)| *a += b),
        }
    }
    total.ok_or_else(|| Error::InvalidArgument("no residual channels".into()))
}

fn power_near(sp: &Spectrum, hz: f64) -> f64 {
    let w = sp.main_lobe_half_width();
    sp.frequencies
        .iter()
        .zip(&sp.power)
        .filter(|(f, _)| (**f - hz).abs() <= w)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max)
}

/// Starting MMTE frequencies (rad/s, ascending) for `order` components: the
/// nominal model's natural frequencies ranked by residual power near them,
/// then residual spectral peaks away from those modes.
pub fn initial_frequencies(class: &ModelClass, dataset: &TimeSeriesDataset, rows: &[usize], order: usize) -> Result<Vec<f64>> {
    let theta = class.structure.initial_theta();
    let model = class.structure.instantiate(&theta)?;
    let modal = modal_analysis(&model)?.frequencies;
    let f = structural_prediction(class, dataset.dt, &theta, dataset.input_history(), rows)?;
    let y = dataset.stacked_output(rows);
    let nc = dataset.n_outputs();
    let series: Vec<ResidualSeries> = (0..nc)
        .map(|c| {
            let v = (0..rows.len()).map(|i| y[i * nc + c] - f[i * nc + c]).collect();
            ResidualSeries::new(v, dataset.dt, format!("dof{}", dataset.channel_labels[c]))
        })
        .collect::<Result<_>>()?;
    let sp = summed_spectrum(&series)?;
    let mut ranked: Vec<(f64, f64)> = modal.iter().map(|&w| (w, power_near(&sp, w / (2.0 * PI)))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let mut out: Vec<f64> = ranked.iter().take(order).map(|r| r.0).collect();
    let sep = 2.0 * PI * sp.main_lobe_half_width();
    for hz in peak_pick(&sp, order + modal.len()) {
        if out.len() >= order {
            break;
        }
        let w = 2.0 * PI * hz;
        if w > 0.0 && out.iter().all(|o| (o - w).abs() > sep) {
            out.push(w);
        }
    }
    while out.len() < order {
        let top = out.iter().copied().fold(modal[0], f64::max);
        out.push(1.5 * top);
    }
    if let Some(hp) = class.kernel.frequency {
        let (lo, hi) = hp.prior.bounds();
        let span = hi - lo;
        for w in out.iter_mut() {
            *w = w.clamp(lo + 1e-3 * span, hi - 1e-3 * span);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Starting point for order `m` built from the order `m − 1` MPV: its
/// components and noise plus one new component at the candidate frequency
/// farthest from the existing ones.
fn warm_start(prev: &LaplaceSummary, class: &ModelClass, candidates: &[f64], problem: &UpdatingProblem<'_>) -> Result<ParameterSplit> {
    let phi = &prev.mpv.phi;
    let (noise, params) = phi.split_last().ok_or_else(|| Error::InvalidArgument("empty kernel parameters".into()))?;
    let mut comps: Vec<[f64; 3]> = params.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let new_w = candidates
        .iter()
        .copied()
        .max_by(|a, b| {
            let gap = |w: f64| comps.iter().map(|c| (c[1] - w).abs()).fold(f64::INFINITY, f64::min);
            gap(*a).total_cmp(&gap(*b))
        })
        .ok_or_else(|| Error::InvalidArgument("no candidate frequency".into()))?;
    let role = |r: Option<crate::inference::HyperPrior>| r.map(|h| h.init).unwrap_or(1.0);
    comps.push([role(class.kernel.variance), new_w, role(class.kernel.inv_length_sq)]);
    comps.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let mut warm: Vec<f64> = comps.into_iter().flatten().collect();
    warm.push(*noise);
    ParameterSplit::new(prev.mpv.theta.clone(), warm, problem.map().clone())
}

/// MPV and BIC for every MMTE order; the highest BIC wins, ties going to the
/// smaller order. Each order is searched from the spectral starting point and,
/// when the next lower order was fitted, from that fit plus one component; the
/// better of the two is kept.
pub fn select_mmte_order(
    class: &ModelClass,
    dataset: &TimeSeriesDataset,
    rows: &[usize],
    orders: &[usize],
    options: &MpvOptions,
) -> Result<OrderSelection> {
    if orders.is_empty() {
        return Err(Error::InvalidArgument("no candidate orders".into()));
    }
    if class.kernel.family != KernelFamily::Mmte {
        return Err(Error::InvalidArgument(format!("order selection needs an MMTE class, got {}", class.kernel.family)));
    }
    let mut sorted = orders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut candidates: Vec<OrderCandidate> = Vec::new();
    let mut failures = Vec::new();
    for &m in &sorted {
        let prev = candidates.last().filter(|c| c.order + 1 == m).map(|c| c.summary.clone());
        let run = || -> Result<OrderCandidate> {
            let mut c = class.clone();
            c.id = format!("{}-m{m}", class.id);
            c.kernel.order = m;
            c.kernel.frequency_init = initial_frequencies(class, dataset, rows, m)?;
            let problem = UpdatingProblem::new(&c, dataset, rows.to_vec())?;
            let mut best = find_mpv(&problem, &c.initial_split()?, options)?;
            if let Some(prev) = &prev {
                let warm = warm_start(prev, &c, &c.kernel.frequency_init, &problem)
                    .and_then(|w| find_mpv(&problem, &w, options));
                match warm {
                    Ok(r) if r.neg_log_posterior < best.neg_log_posterior => {
                        log::info!("order {m}: warm start improves L from {:.4} to {:.4}", best.neg_log_posterior, r.neg_log_posterior);
                        best = r;
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("order {m}: warm start failed: {e}"),
                }
            }
            let mut summary = laplace_covariance(&problem, &best.mpv)?;
            summary.converged = best.converged;
            summary.iterations = best.iterations;
            let bic = bic_score(summary.log_likelihood_at_mpv, bic_parameter_count(&problem), problem.n_data());
            log::info!("order {m}: ln L = {:.4}, BIC = {bic:.4}", summary.log_likelihood_at_mpv);
            Ok(OrderCandidate {
                order: m,
                frequency_init: c.kernel.frequency_init,
                summary,
                bic,
            })
        };
        match run() {
            Ok(c) => candidates.push(c),
            Err(e) => {
                log::warn!("order {m} failed: {e}");
                failures.push((m, e.to_string()));
            }
        }
    }
    let best = candidates
        .iter()
        .fold(None::<&OrderCandidate>, |b, c| match b {
            Some(b) if b.bic >= c.bic => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Numerical(format!("every candidate order failed: {failures:?}")))?;
    let chosen = best.order;
    Ok(OrderSelection {
        candidates,
        failures,
        chosen,
    })
}

/// Columns `model_id, evidence_source, log_evidence, log_posterior_predictive,
/// total, bic, probability`.
pub fn score_table(scores: &[ModelClassScore], probabilities: &[f64]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.10e}"));
    let mut s = String::from("model_id,evidence_source,log_evidence,log_posterior_predictive,total,bic,probability\n");
    for (sc, p) in scores.iter().zip(probabilities) {
        let src = match sc.evidence_source {
            EvidenceSource::Tmcmc => "tmcmc",
            EvidenceSource::Laplace => "laplace",
        };
        let _ = writeln!(
            s,
            "{},{src},{:.10e},{},{},{},{p:.10e}",
            sc.model_id,
            sc.log_evidence,
            opt(sc.log_posterior_predictive),
            opt(sc.total()),
            opt(sc.bic)
        );
    }
    s
}
