//! Transitional MCMC: tempered sampling of the posterior with an evidence
//! estimate as a by-product.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ParameterMap, Prior, Transform, UpdatingProblem};
use crate::linalg::{log_sum_exp, pairwise_sum, symmetrize};
use crate::rng::{stream, StreamRng};

/// A posterior known through its prior and likelihood. Coordinates are the
/// target's own sampling coordinates; [`to_natural`](Self::to_natural) maps a
/// point back for reporting.
pub trait BayesianTarget: Sync {
    fn dim(&self) -> usize;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{}", i + 1)).collect()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64>;

    /// Prior log density up to a constant, `-inf` outside the support.
    fn ln_prior(&self, x: &[f64]) -> f64;

    /// `-inf` where the likelihood cannot be evaluated.
    fn log_likelihood(&self, x: &[f64]) -> f64;

    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmcmcConfig {
    pub n_samples: usize,
    #[serde(default = "default_cov")]
    pub target_weight_cov: f64,
    #[serde(default = "default_scale")]
    pub proposal_scale: f64,
    #[serde(default = "default_stages")]
    pub max_stages: usize,
    /// Metropolis steps per sample per stage.
    #[serde(default = "default_chain")]
    pub chain_length: usize,
    pub seed: u64,
}

fn default_chain() -> usize {
    1
}

fn default_cov() -> f64 {
    1.0
}

fn default_scale() -> f64 {
    0.2
}

fn default_stages() -> usize {
    200
}

impl TmcmcConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            target_weight_cov: default_cov(),
            proposal_scale: default_scale(),
            max_stages: default_stages(),
            chain_length: default_chain(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100 {
            return Err(Error::InvalidArgument(format!("n_samples must be at least 100, got {}", self.n_samples)));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale <= 1.0) {
            return Err(Error::InvalidArgument(format!("proposal_scale must lie in (0, 1], got {}", self.proposal_scale)));
        }
        if !(self.target_weight_cov > 0.0 && self.target_weight_cov.is_finite()) {
            return Err(Error::InvalidArgument("target_weight_cov must be positive".into()));
        }
        if self.chain_length == 0 {
            return Err(Error::InvalidArgument("chain_length must be positive".into()));
        }
        if self.max_stages == 0 {
            return Err(Error::InvalidArgument("max_stages must be positive".into()));
        }
        Ok(())
    }
}

/// Final-stage samples and tempering diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub names: Vec<String>,
    /// `N_s × d`, natural units.
    pub samples: DMatrix<f64>,
    pub log_likelihoods: Vec<f64>,
    pub log_evidence: f64,
    /// Tempering exponents, starting at 0 and ending at 1.
    pub stage_betas: Vec<f64>,
    pub acceptance_rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SamplesSummary {
    names: Vec<String>,
    n_samples: usize,
    log_evidence: f64,
    stages: usize,
    stage_betas: Vec<f64>,
    acceptance_rates: Vec<f64>,
    mean: Vec<f64>,
    std_dev: Vec<f64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.samples.row(i).iter().copied().collect()
    }

    /// Distinct rows with their multiplicities, in first-appearance order.
    pub fn unique(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        let mut seen: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        for i in 0..self.len() {
            let key: Vec<u64> = self.samples.row(i).iter().map(|v| v.to_bits()).collect();
            match seen.get(&key) {
                Some(&k) => out[k].1 += 1,
                None => {
                    seen.insert(key, out.len());
                    out.push((i, 1));
                }
            }
        }
        out
    }

    /// One row per sample; columns are the parameter names and `log_likelihood`.
    pub fn to_table(&self) -> String {
        let mut s = self.names.join(",");
        s.push_str(",log_likelihood\n");
        for i in 0..self.len() {
            for j in 0..self.dim() {
                let _ = write!(s, "{:.16e},", self.samples[(i, j)]);
            }
            let _ = writeln!(s, "{:.16e}", self.log_likelihoods[i]);
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let (mean, cov) = sample_moments(self);
        let sum = SamplesSummary {
            names: self.names.clone(),
            n_samples: self.len(),
            log_evidence: self.log_evidence,
            stages: self.stage_betas.len() - 1,
            stage_betas: self.stage_betas.clone(),
            acceptance_rates: self.acceptance_rates.clone(),
            mean: mean.iter().copied().collect(),
            std_dev: cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
        };
        serde_json::to_string_pretty(&sum).expect("summary serializes")
    }

    /// `samples.csv` → `samples.summary.json`.
    pub fn summary_path(table: &Path) -> PathBuf {
        table.with_extension("summary.json")
    }

    pub fn save(&self, table: &Path) -> Result<()> {
        std::fs::write(table, self.to_table()).map_err(|e| Error::io(table, e))?;
        let p = Self::summary_path(table);
        std::fs::write(&p, self.summary_json()).map_err(|e| Error::io(&p, e))
    }

    pub fn load(table: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(table).map_err(|e| Error::io(table, e))?;
        let sp = Self::summary_path(table);
        let stext = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let sum: SamplesSummary = serde_json::from_str(&stext).map_err(|e| Error::Parse {
            path: sp.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let path = table.display().to_string();
        let perr = |line: usize, message: String| Error::Parse {
            path: path.clone(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.last() != Some(&"log_likelihood") || cols[..cols.len() - 1] != sum.names.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            return Err(perr(1, "header does not match the summary's parameter names".into()));
        }
        let d = cols.len() - 1;
        let mut vals = Vec::new();
        let mut lls = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(perr(idx + 1, format!("expected {} fields, found {}", d + 1, fields.len())));
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| perr(idx + 1, format!("invalid number '{f}'")))?;
                if j < d {
                    vals.push(v);
                } else {
                    lls.push(v);
                }
            }
        }
        if lls.len() != sum.n_samples {
            return Err(perr(0, format!("{} rows but the summary lists {}", lls.len(), sum.n_samples)));
        }
        Ok(Self {
            names: sum.names,
            samples: DMatrix::from_row_slice(lls.len(), d, &vals),
            log_likelihoods: lls,
            log_evidence: sum.log_evidence,
            stage_betas: sum.stage_betas,
            acceptance_rates: sum.acceptance_rates,
        })
    }
}

/// Plug-in mean and `1/N` covariance of the rows of `x`.
pub fn row_moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let nf = n as f64;
    let mean = DVector::from_fn(d, |j, _| pairwise_sum(&x.column(j).iter().copied().collect::<Vec<_>>()) / nf);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centered.tr_mul(&centered) / nf;
    symmetrize(&mut cov);
    (mean, cov)
}

/// Posterior mean and covariance estimated from the samples (`1/N_s` convention).
pub fn sample_moments(samples: &PosteriorSamples) -> (DVector<f64>, DMatrix<f64>) {
    row_moments(&samples.samples)
}

/// `ln mean_m L(x_m)` over draws from the prior. Unreliable for peaked
/// likelihoods; kept for comparison with the tempered estimate.
pub fn evidence_naive<T: BayesianTarget>(target: &T, prior_draws: &[Vec<f64>]) -> f64 {
    let lls: Vec<f64> = prior_draws.par_iter().map(|x| target.log_likelihood(x)).collect();
    let z = log_sum_exp(&lls) - (lls.len() as f64).ln();
    if z == f64::NEG_INFINITY {
        log::warn!("every likelihood underflowed; naive evidence is -inf");
    }
    z
}

/// `n` prior draws in the target's coordinates, one stream per draw.
pub fn draw_prior_samples<T: BayesianTarget>(target: &T, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|i| target.sample_prior(&mut stream(seed, &[0, i as u64])))
        .collect()
}

fn weight_cov(ll: &[f64], llmax: f64, dbeta: f64) -> f64 {
    let w: Vec<f64> = ll.iter().map(|l| (dbeta * (l - llmax)).exp()).collect();
    let n = w.len() as f64;
    let mean = pairwise_sum(&w) / n;
    let var = pairwise_sum(&w.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / n;
    var.sqrt() / mean
}

/// Largest `Δβ ≤ 1-β` with weight COV not above the target.
fn next_increment(ll: &[f64], beta: f64, target: f64) -> f64 {
    let llmax = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest = 1.0 - beta;
    if weight_cov(ll, llmax, rest) <= target {
        return rest;
    }
    let (mut lo, mut hi) = (0.0, rest);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if weight_cov(ll, llmax, mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // `lo` can be 0 only if one sample carries all weight at any increment.
    if lo > 0.0 {
        lo
    } else {
        hi
    }
}

/// `n` multinomial draws from the (not necessarily normalized) weights `p`.
pub fn resample_indices(p: &[f64], n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut cum = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for pi in p {
        acc += pi;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cum.partition_point(|c| *c < u).min(p.len() - 1)
        })
        .collect()
}

fn cholesky_with_jitter(mut c: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = c.nrows();
    let scale = (0..d).map(|i| c[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for k in 0..8 {
        if let Some(ch) = c.clone().cholesky() {
            return Ok(ch.l());
        }
        let eps = scale * 1e-10 * 10f64.powi(k);
        for i in 0..d {
            c[(i, i)] += eps;
        }
    }
    Err(Error::Numerical("proposal covariance is not positive definite".into()))
}

/// Tempered sampling from `p(x)` to `p(x) L(x)`. Draws are deterministic given
/// `config.seed`: stream `(seed, 0, i)` for the prior draw of sample `i`,
/// `(seed, 1, j)` for stage `j` resampling and `(seed, 2, j, i)` for the
/// Metropolis move of sample `i` at stage `j`.
pub fn tmcmc<T: BayesianTarget>(target: &T, config: &TmcmcConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let n = config.n_samples;
    let d = target.dim();
    let mut xs = draw_prior_samples(target, n, config.seed);
    let mut ll: Vec<f64> = xs.par_iter().map(|x| target.log_likelihood(x)).collect();
    if ll.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Numerical("likelihood is zero for every prior draw".into()));
    }
    let mut beta = 0.0;
    let mut betas = vec![0.0];
    let mut rates = Vec::new();
    let mut terms = Vec::new();
    let mut stage = 0usize;
    while beta < 1.0 {
        if stage >= config.max_stages {
            return Err(Error::StageLimit {
                stages: stage,
                beta,
                betas,
                acceptance_rates: rates,
            });
        }
        let dbeta = next_increment(&ll, beta, config.target_weight_cov);
        let new_beta = if beta + dbeta >= 1.0 - 1e-12 { 1.0 } else { beta + dbeta };
        let dbeta = new_beta - beta;
        let llmax = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = ll.iter().map(|l| (dbeta * (l - llmax)).exp()).collect();
        let wsum = pairwise_sum(&w);
        terms.push((wsum / n as f64).ln() + dbeta * llmax);
        let p: Vec<f64> = w.iter().map(|v| v / wsum).collect();

        // Weighted covariance of the current population.
        let mut mean = vec![0.0; d];
        for (x, pi) in xs.iter().zip(&p) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += pi * xi;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for (x, pi) in xs.iter().zip(&p) {
            let c = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
            cov += &c * c.transpose() * *pi;
        }
        symmetrize(&mut cov);
        let chol = cholesky_with_jitter(cov * config.proposal_scale.powi(2))?;

        // Equal weights carry no information; resampling would only add duplicates.
        let picks: Vec<usize> = if w.iter().all(|v| *v == w[0]) {
            (0..n).collect()
        } else {
            resample_indices(&p, n, &mut stream(config.seed, &[1, stage as u64]))
        };

        let moved: Vec<(Vec<f64>, f64, usize)> = picks
            .par_iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut rng = stream(config.seed, &[2, stage as u64, i as u64]);
                let mut x = xs[k].clone();
                let mut lx = ll[k];
                let mut accepted = 0;
                for _ in 0..config.chain_length {
                    let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
                    let step = &chol * z;
                    let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                    let u: f64 = rng.random();
                    let lp_new = target.ln_prior(&cand);
                    if lp_new == f64::NEG_INFINITY {
                        continue;
                    }
                    let ll_new = target.log_likelihood(&cand);
                    let log_ratio = lp_new + new_beta * ll_new - target.ln_prior(&x) - new_beta * lx;
                    if ll_new > f64::NEG_INFINITY && u.ln() < log_ratio {
                        x = cand;
                        lx = ll_new;
                        accepted += 1;
                    }
                }
                (x, lx, accepted)
            })
            .collect();
        let accepted: usize = moved.iter().map(|m| m.2).sum();
        rates.push(accepted as f64 / (n * config.chain_length) as f64);
        xs = moved.iter().map(|m| m.0.clone()).collect();
        ll = moved.iter().map(|m| m.1).collect();
        beta = new_beta;
        betas.push(beta);
        stage += 1;
        log::debug!("tmcmc stage {stage}: beta = {beta:.6e}, acceptance = {:.3}", rates[stage - 1]);
    }
    let log_evidence = pairwise_sum(&terms);
    if !log_evidence.is_finite() {
        return Err(Error::Numerical(format!("log evidence is {log_evidence}")));
    }
    let natural: Vec<Vec<f64>> = xs.iter().map(|x| target.to_natural(x)).collect();
    Ok(PosteriorSamples {
        names: target.names(),
        samples: DMatrix::from_fn(n, d, |i, j| natural[i][j]),
        log_likelihoods: ll,
        log_evidence,
        stage_betas: betas,
        acceptance_rates: rates,
    })
}

/// Posterior of an updating problem, sampled in the coordinates where every
/// prior is flat (log for log-uniform entries).
pub struct ProblemTarget<'p, 'a> {
    problem: &'p UpdatingProblem<'a>,
    flat: Vec<(Transform, f64, f64)>,
}

impl<'p, 'a> ProblemTarget<'p, 'a> {
    pub fn new(problem: &'p UpdatingProblem<'a>) -> Self {
        let flat = problem
            .map()
            .entries()
            .iter()
            .map(|e| {
                let t = e.prior.flat_transform();
                let (lo, hi) = e.prior.bounds();
                (t, t.forward(lo), t.forward(hi))
            })
            .collect();
        Self { problem, flat }
    }

    pub fn map(&self) -> &ParameterMap {
        self.problem.map()
    }
}

impl BayesianTarget for ProblemTarget<'_, '_> {
    fn dim(&self) -> usize {
        self.flat.len()
    }

    fn names(&self) -> Vec<String> {
        self.problem.map().names()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.flat.iter().map(|(_, lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect()
    }

    fn ln_prior(&self, u: &[f64]) -> f64 {
        if self.flat.iter().zip(u).all(|((_, lo, hi), v)| v >= lo && v <= hi) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn log_likelihood(&self, u: &[f64]) -> f64 {
        let x = self.to_natural(u);
        let nt = self.problem.map().n_theta();
        // Round-off in exp can land a hair outside the natural bounds.
        let x: Vec<f64> = x
            .iter()
            .zip(self.problem.map().entries())
            .map(|(v, e)| {
                let (lo, hi) = e.prior.bounds();
                v.clamp(lo, hi)
            })
            .collect();
        match self.problem.log_likelihood(&x[..nt], &x[nt..]) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    fn to_natural(&self, u: &[f64]) -> Vec<f64> {
        self.flat.iter().zip(u).map(|((t, _, _), v)| t.inverse(*v)).collect()
    }
}

/// TMCMC over the posterior of `problem`.
pub fn tmcmc_sample(problem: &UpdatingProblem<'_>, config: &TmcmcConfig) -> Result<PosteriorSamples> {
    tmcmc(&ProblemTarget::new(problem), config)
}

/// Product of independent priors from [`Prior`], sampled in natural units.
/// Useful for targets with a closed-form likelihood.
pub struct IndependentTarget<F> {
    pub priors: Vec<Prior>,
    pub log_likelihood: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> BayesianTarget for IndependentTarget<F> {
    fn dim(&self) -> usize {
        self.priors.len()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.priors
            .iter()
            .map(|p| {
                let t = p.flat_transform();
                let (lo, hi) = p.bounds();
                let (a, b) = (t.forward(lo), t.forward(hi));
                t.inverse(a + (b - a) * rng.random::<f64>())
            })
            .collect()
    }

    fn ln_prior(&self, x: &[f64]) -> f64 {
        self.priors.iter().zip(x).map(|(p, v)| p.ln_pdf(*v)).sum()
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        (self.log_likelihood)(x)
    }
}
