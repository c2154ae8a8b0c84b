//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits non-zero if any fails. Pass criterion numbers as arguments to
//! run a subset: `cargo test --test acceptance -- 6 7 11`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use gpsid_core::diagnostics::{peak_pick, periodogram, ResidualSeries};
use gpsid_core::dynamics::*;
use gpsid_core::inference::*;
use gpsid_core::kernels::KernelFamily;
use gpsid_core::prediction::*;
use gpsid_core::rng::{stream, StreamRng};
use gpsid_core::sampler::*;
use gpsid_core::selection::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

mod common;
use common::{log_uniform, sdof_class};

const FAMILIES: [KernelFamily; 4] = [KernelFamily::Gwn, KernelFamily::Se, KernelFamily::Pe, KernelFamily::Mmte];
const SDOF_NOISE: f64 = 0.05;
const SDOF_TRAIN: usize = 2000;
const FIVE_STORY_NOISE: f64 = 0.01;
const FIVE_STORY_TRAIN: usize = 3000;

struct Verdict {
    id: usize,
    pass: bool,
    line: String,
}

fn verdict(id: usize, title: &str, pass: bool, detail: String) -> Verdict {
    let line = format!("criterion {id:>2}: {} | {title} | {detail}", if pass { "PASS" } else { "FAIL" });
    println!("{line}");
    Verdict { id, pass, line }
}

fn sdof_dataset(seed: u64, noise: Option<f64>) -> TimeSeriesDataset {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed }, 0.01, 40.0, noise).unwrap()
}

fn heldout() -> Vec<usize> {
    (SDOF_TRAIN..2 * SDOF_TRAIN).collect()
}

// ---------------------------------------------------------------- fixtures

struct SdofFits {
    data: TimeSeriesDataset,
    classes: Vec<ModelClass>,
    fits: Vec<(MpvResult, Duration)>,
}

impl SdofFits {
    fn new() -> Self {
        let data = sdof_dataset(1, Some(SDOF_NOISE));
        let classes: Vec<ModelClass> = FAMILIES.iter().map(|&f| sdof_class(f)).collect();
        let fits = classes
            .iter()
            .map(|c| {
                let p = UpdatingProblem::prefix(c, &data, SDOF_TRAIN).unwrap();
                let t = Instant::now();
                let r = find_mpv(&p, &c.initial_split().unwrap(), &MpvOptions::default()).unwrap();
                (r, t.elapsed())
            })
            .collect();
        Self { data, classes, fits }
    }

    fn index(&self, f: KernelFamily) -> usize {
        FAMILIES.iter().position(|&g| g == f).unwrap()
    }
}

/// Rayleigh damping `C = αK + 2e-5 M`.
fn five_story(alpha: f64, observed: Vec<usize>) -> ShearBuildingModel {
    ShearBuildingModel::new(
        vec![1.0; 5],
        vec![10.0; 5],
        DampingSpec::Rayleigh { alpha, beta: 2e-5 },
        observed,
        Excitation::Force { dof: 4 },
    )
    .unwrap()
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Config {
    A,
    B,
}

impl Config {
    fn dofs(self) -> Vec<usize> {
        match self {
            Config::A => vec![1],
            Config::B => vec![1, 3],
        }
    }
}

/// Stories (0-based) with an unknown stiffness ratio in Cases I, II and III.
const CASES: [&[usize]; 3] = [&[0], &[0, 3], &[0, 3, 4]];

fn five_story_class(config: Config, stories: &[usize], order: usize) -> ModelClass {
    ModelClass {
        id: format!("{config:?}-{}", stories.len()),
        structure: StructuralModelClass {
            template: five_story(0.03, config.dofs()),
            unknowns: stories
                .iter()
                .map(|&s| UnknownParameter {
                    name: format!("theta{}", s + 1),
                    kind: StructuralParameter::StiffnessRatio { story: s },
                    prior: Prior::Uniform { lo: 0.5, hi: 1.5 },
                    init: 0.95,
                })
                .collect(),
        },
        kernel: KernelSpec {
            family: KernelFamily::Mmte,
            order,
            variance: Some(log_uniform(1e-6, 1.0, 1e-3)),
            inv_length_sq: Some(log_uniform(1e-3, 1e2, 0.1)),
            frequency: Some(log_uniform(0.3, 20.0, 1.0)),
            noise: log_uniform(1e-8, 1.0, 1e-3),
            frequency_init: vec![],
        },
        truncation: TruncationPolicy::default(),
    }
}

/// Both sensor channels; each configuration selects its columns.
fn five_story_data() -> TimeSeriesDataset {
    let truth = five_story(0.02, vec![1, 3]);
    synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 1 }, 0.01, 60.0, Some(FIVE_STORY_NOISE)).unwrap()
}

fn select_config(full: &TimeSeriesDataset, config: Config) -> TimeSeriesDataset {
    let cols: Vec<usize> = match config {
        Config::A => vec![0],
        Config::B => vec![0, 1],
    };
    TimeSeriesDataset::new(full.dt, full.input.clone(), full.output.select_columns(&cols), config.dofs(), full.metadata.clone())
        .unwrap()
}

struct FiveStory {
    data: [TimeSeriesDataset; 2],
    order_selection: Option<OrderSelection>,
    /// `[config][case]`.
    fits: Vec<Vec<Option<LaplaceSummary>>>,
}

impl FiveStory {
    fn new() -> Self {
        let full = five_story_data();
        Self {
            data: [select_config(&full, Config::A), select_config(&full, Config::B)],
            order_selection: None,
            fits: vec![vec![None, None, None], vec![None, None, None]],
        }
    }

    fn rows() -> Vec<usize> {
        (0..FIVE_STORY_TRAIN).collect()
    }

    fn selection(&mut self) -> &OrderSelection {
        if self.order_selection.is_none() {
            let class = five_story_class(Config::A, CASES[0], 3);
            let sel = select_mmte_order(&class, &self.data[0], &Self::rows(), &[1, 2, 3, 4, 5], &MpvOptions::default()).unwrap();
            self.order_selection = Some(sel);
        }
        self.order_selection.as_ref().unwrap()
    }

    fn fit(&mut self, config: Config, case: usize) -> &LaplaceSummary {
        let ci = config as usize;
        if self.fits[ci][case].is_none() {
            // Case I / Config A is the m = 3 candidate of the order scan when it has run.
            let reuse = (config == Config::A && case == 0)
                .then(|| self.order_selection.as_ref())
                .flatten()
                .and_then(|s| s.candidates.iter().find(|c| c.order == 3))
                .map(|c| c.summary.clone());
            let summary = reuse.unwrap_or_else(|| {
                let data = &self.data[ci];
                let mut class = five_story_class(config, CASES[case], 3);
                class.kernel.frequency_init = initial_frequencies(&class, data, &Self::rows(), 3).unwrap();
                let p = UpdatingProblem::new(&class, data, Self::rows()).unwrap();
                identify(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap()
            });
            self.fits[ci][case] = Some(summary);
        }
        self.fits[ci][case].as_ref().unwrap()
    }
}

// ---------------------------------------------------------------- criteria

fn criterion_1(sdof: &SdofFits) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (f, (r, el)) in FAMILIES.iter().zip(&sdof.fits) {
        let k = r.mpv.theta[0];
        let ok = (4.95..=5.05).contains(&k) && *el < Duration::from_secs(300) && r.converged;
        pass &= ok;
        parts.push(format!("{f} k={k:.4} in {:.1}s", el.as_secs_f64()));
    }
    verdict(1, "SDOF MPV stiffness in [4.95, 5.05] within 5 min per kernel", pass, parts.join(", "))
}

fn criterion_2() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3u64 {
        let data = sdof_dataset(seed, Some(SDOF_NOISE));
        let mut ev = Vec::new();
        let mut total = Vec::new();
        for &f in &FAMILIES {
            let class = sdof_class(f);
            let p = UpdatingProblem::prefix(&class, &data, SDOF_TRAIN).unwrap();
            let s = tmcmc_sample(&p, &TmcmcConfig::new(1000, seed)).unwrap();
            let lpp = log_posterior_predictive_score(&s, &p, &heldout()).unwrap();
            ev.push(s.log_evidence);
            total.push(s.log_evidence + lpp);
        }
        let (gwn, se, pe, mmte) = (0, 1, 2, 3);
        let evidence_order = ev[mmte] > ev[se] && ev[se] > ev[gwn];
        let mmte_first = (0..4).all(|i| i == mmte || total[mmte] > total[i]);
        let pe_worst = (0..4).all(|i| i == pe || total[pe] < total[i]);
        pass &= evidence_order && mmte_first && pe_worst;
        parts.push(format!(
            "seed {seed}: lnZ[gwn,se,pe,mmte]={:?} total={:?} order={evidence_order} mmte_first={mmte_first} pe_worst={pe_worst}",
            ev.iter().map(|v| v.round()).collect::<Vec<_>>(),
            total.iter().map(|v| v.round()).collect::<Vec<_>>(),
        ));
    }
    verdict(
        2,
        "TMCMC evidence MMTE > SE > GWN; total score ranks MMTE first and PE last (3 seeds)",
        pass,
        parts.join("; "),
    )
}

fn criterion_3(sdof: &SdofFits) -> Verdict {
    let (r, _) = &sdof.fits[sdof.index(KernelFamily::Mmte)];
    let w = r.mpv.get("omega_1").unwrap_or(r.mpv.phi[1]);
    let rel = (w / 5f64.sqrt() - 1.0).abs();
    verdict(3, "MMTE frequency within 5% of 2.236 rad/s", rel <= 0.05, format!("omega={w:.4} rel_err={rel:.4}"))
}

fn criterion_4(five: &mut FiveStory) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut sd = vec![vec![Vec::new(); 3]; 2];
    for config in [Config::A, Config::B] {
        let band = if config == Config::A { 0.03 } else { 0.02 };
        for case in 0..3 {
            let s = five.fit(config, case);
            let nt = s.mpv.theta.len();
            let sds = s.std_devs()[..nt].to_vec();
            let ok = s.mpv.theta.iter().all(|t| (t - 1.0).abs() <= band) && s.identifiable;
            pass &= ok;
            parts.push(format!(
                "{config:?}/{}: theta={:?} sd={:?}",
                ["I", "II", "III"][case],
                s.mpv.theta.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
                sds.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
            ));
            sd[config as usize][case] = sds;
        }
    }
    // Story 1 appears in every case, story 4 in Cases II and III.
    let mut trend = true;
    for c in 0..2 {
        trend &= sd[c][0][0] <= sd[c][1][0] && sd[c][1][0] <= sd[c][2][0];
        trend &= sd[c][1][1] <= sd[c][2][1];
    }
    let mut sensor = true;
    for case in 0..3 {
        for j in 0..sd[0][case].len() {
            sensor &= sd[1][case][j] <= sd[0][case][j];
        }
    }
    pass &= trend && sensor;
    parts.push(format!("sd_trend_in_unknowns={trend} sd_drop_with_second_sensor={sensor}"));
    verdict(4, "5-story stiffness ratios and SD trends", pass, parts.join("; "))
}

fn criterion_5(five: &mut FiveStory, sdof: &SdofFits) -> Verdict {
    let sel = five.selection();
    let five_bic: Vec<String> = sel.candidates.iter().map(|c| format!("m{}={:.1}", c.order, c.bic)).collect();
    let five_choice = sel.chosen;
    let class = &sdof.classes[sdof.index(KernelFamily::Mmte)];
    let rows: Vec<usize> = (0..SDOF_TRAIN).collect();
    let sdof_sel = select_mmte_order(class, &sdof.data, &rows, &[1, 2, 3, 4, 5], &MpvOptions::default()).unwrap();
    let sdof_bic: Vec<String> = sdof_sel.candidates.iter().map(|c| format!("m{}={:.1}", c.order, c.bic)).collect();
    verdict(
        5,
        "BIC peaks at m = 3 (5-story Case I/A) and m = 1 (SDOF)",
        five_choice == 3 && sdof_sel.chosen == 1,
        format!("5-story chose {five_choice} [{}]; SDOF chose {} [{}]", five_bic.join(" "), sdof_sel.chosen, sdof_bic.join(" ")),
    )
}

fn criterion_6() -> Verdict {
    let w = modal_analysis(&five_story(0.02, vec![1])).unwrap().frequencies;
    let expected = [0.90, 2.63, 4.14, 5.32, 6.07];
    let err = w.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(6, "5-story modal frequencies within 0.01 rad/s", err <= 0.01, format!("omega={:?} max_err={err:.4}", w.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()))
}

/// Kernel value restated independently of the library.
fn oracle_kernel(family: KernelFamily, p: &[f64], d: f64) -> f64 {
    match family {
        KernelFamily::Gwn => 0.0,
        KernelFamily::Se => p[0] * (-0.5 * p[1] * d * d).exp(),
        KernelFamily::Pe => p[0] * (-0.5 * p[1] * (p[2] * d).sin().powi(2)).exp(),
        KernelFamily::Mmte => p.chunks(3).map(|c| c[0] * (-c[2] * d * d).exp() * (c[1] * d).cos()).sum(),
    }
}

fn random_subset(rng: &mut impl Rng, pool: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..k {
        let j = rng.random_range(i..pool);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

fn log_uniform_draw(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let two = ShearBuildingModel::new(
        vec![1.0, 1.5],
        vec![8.0, 6.0],
        DampingSpec::ViscousRatio { zeta: 0.03 },
        vec![0, 1],
        Excitation::Force { dof: 1 },
    )
    .unwrap();
    let data2 = synthesize_dataset(&two, GwnExcitation { std: 1.0, seed: 77 }, 0.05, 5.0, Some(0.02)).unwrap();
    let data1 = sdof_dataset(77, Some(0.02));
    let mut worst: f64 = 0.0;
    let mut counts = [0usize; 4];
    for inst in 0..200u64 {
        let mut rng = stream(7, &[inst]);
        let family = FAMILIES[(inst % 4) as usize];
        counts[(inst % 4) as usize] += 1;
        let channels = 1 + rng.random_range(0..2usize);
        let budget = 40 / channels;
        let n = rng.random_range(1..budget);
        let np = rng.random_range(1..=(budget - n));
        let (class, data) = if channels == 1 {
            (sdof_class(family), &data1)
        } else {
            let mut c = sdof_class(family);
            c.structure.template = two.clone();
            c.structure.unknowns[0].kind = StructuralParameter::StiffnessRatio { story: 0 };
            c.structure.unknowns[0].prior = Prior::Uniform { lo: 0.5, hi: 1.5 };
            c.structure.unknowns[0].init = 1.0;
            (c, &data2)
        };
        let train = random_subset(&mut rng, 100, n);
        let pred = random_subset(&mut rng, 100, np);
        let theta = vec![if channels == 1 { rng.random_range(4.0..6.0) } else { rng.random_range(0.8..1.2) }];
        let var = log_uniform_draw(&mut rng, 1e-3, 1.0);
        let (params, order) = match family {
            KernelFamily::Gwn => (vec![], 1),
            KernelFamily::Se => (vec![var, log_uniform_draw(&mut rng, 0.1, 50.0)], 1),
            KernelFamily::Pe => (vec![var, log_uniform_draw(&mut rng, 0.1, 5.0), log_uniform_draw(&mut rng, 0.5, 10.0)], 1),
            KernelFamily::Mmte => {
                let m = rng.random_range(1..=3usize);
                let p = (0..m)
                    .flat_map(|_| {
                        [
                            var * log_uniform_draw(&mut rng, 0.1, 1.0),
                            log_uniform_draw(&mut rng, 0.5, 10.0),
                            log_uniform_draw(&mut rng, 0.01, 10.0),
                        ]
                    })
                    .collect();
                (p, m)
            }
        };
        let noise = var * log_uniform_draw(&mut rng, 1e-3, 1.0);
        let mut class = class;
        class.kernel.order = order;
        let phi: Vec<f64> = params.iter().copied().chain(std::iter::once(noise)).collect();
        let problem = UpdatingProblem::new(&class, data, train.clone()).unwrap();
        let got = conditional_predict(&problem, &theta, &phi, data.input_history(), &pred).unwrap();
        let canonical = problem.kernel(&phi).unwrap();

        // Brute force: joint Gaussian of [train; pred] conditioned by LU solves.
        let times = |rows: &[usize]| rows.iter().map(|&r| r as f64 * data.dt).collect::<Vec<f64>>();
        let (tt, tp) = (times(&train), times(&pred));
        let block = |a: &[f64], b: &[f64], diag_noise: bool| {
            DMatrix::from_fn(a.len() * channels, b.len() * channels, |i, j| {
                if i % channels != j % channels {
                    return 0.0;
                }
                let (ti, tj) = (a[i / channels], b[j / channels]);
                oracle_kernel(family, canonical.params(), (ti - tj).abs()) + if diag_noise && i == j { noise } else { 0.0 }
            })
        };
        let ktt = block(&tt, &tt, true);
        let ktp = block(&tt, &tp, false);
        let kpp = block(&tp, &tp, true);
        let f_train = structural_prediction(&class, data.dt, &theta, data.input_history(), &train).unwrap();
        let f_pred = structural_prediction(&class, data.dt, &theta, data.input_history(), &pred).unwrap();
        let y = DVector::from_vec(data.stacked_output(&train)) - DVector::from_vec(f_train);
        let lu_t = ktt.clone().lu();
        let alpha = lu_t.solve(&y).unwrap();
        let mean = DVector::from_vec(f_pred) + ktp.transpose() * alpha;
        let cov = &kpp - ktp.transpose() * lu_t.solve(&ktp).unwrap();

        let mean_err = got.mean.iter().zip(mean.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / mean.amax().max(f64::MIN_POSITIVE);
        let full = got.covariance.full().unwrap();
        let cov_err = (full - &cov).amax() / cov.amax();
        worst = worst.max(mean_err).max(cov_err);
    }
    let el = t.elapsed();
    verdict(
        7,
        "conditional prediction matches joint-Gaussian conditioning (200 instances, <= 40 outputs)",
        worst <= 1e-10 && el < Duration::from_secs(60),
        format!("max_rel_err={worst:.2e} families[gwn,se,pe,mmte]={counts:?} time={:.2}s", el.as_secs_f64()),
    )
}

/// Linear-Gaussian model `y = A x + e`, `x ~ N(m0, P0)`, `e ~ N(0, s² I)`.
struct LinearGaussian {
    a: DMatrix<f64>,
    y: DVector<f64>,
    m0: DVector<f64>,
    p0_chol: DMatrix<f64>,
    p0_inv: DMatrix<f64>,
    s2: f64,
}

impl LinearGaussian {
    fn new() -> Self {
        let n = 20;
        let a = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / n as f64 });
        let truth = DVector::from_vec(vec![0.7, -1.3]);
        let mut rng = stream(11, &[]);
        let s2: f64 = 0.5f64.powi(2);
        let e = DVector::from_fn(n, |_, _| s2.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let p0 = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 2.0]);
        Self {
            y: &a * truth + e,
            a,
            m0: DVector::from_vec(vec![0.2, 0.1]),
            p0_chol: p0.clone().cholesky().unwrap().l(),
            p0_inv: p0.try_inverse().unwrap(),
            s2,
        }
    }

    fn analytic_log_evidence(&self) -> f64 {
        let n = self.y.len();
        let p0 = &self.p0_chol * self.p0_chol.transpose();
        let c = DMatrix::identity(n, n) * self.s2 + &self.a * p0 * self.a.transpose();
        let r = &self.y - &self.a * &self.m0;
        let ch = c.cholesky().unwrap();
        let logdet: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        -0.5 * (n as f64 * (2.0 * PI).ln() + logdet + r.dot(&ch.solve(&r)))
    }

    fn analytic_posterior_cov(&self) -> DMatrix<f64> {
        (self.a.transpose() * &self.a / self.s2 + &self.p0_inv).try_inverse().unwrap()
    }

    fn analytic_posterior_mean(&self) -> DVector<f64> {
        self.analytic_posterior_cov() * (self.a.transpose() * &self.y / self.s2 + &self.p0_inv * &self.m0)
    }

    fn neg_log_posterior(&self, x: &[f64]) -> f64 {
        let ln_prior = self.ln_prior(x);
        -(self.log_likelihood(x) + ln_prior)
    }
}

impl BayesianTarget for LinearGaussian {
    fn dim(&self) -> usize {
        2
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.m0 + &self.p0_chol * z).iter().copied().collect()
    }

    fn ln_prior(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.m0;
        -0.5 * d.dot(&(&self.p0_inv * &d))
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        let r = &self.y - &self.a * DVector::from_column_slice(x);
        let n = self.y.len() as f64;
        -0.5 * (n * (2.0 * PI * self.s2).ln() + r.norm_squared() / self.s2)
    }
}

fn criterion_8() -> Verdict {
    let lg = LinearGaussian::new();
    let exact = lg.analytic_log_evidence();
    let estimates: Vec<f64> = (1..=5u64).map(|seed| tmcmc(&lg, &TmcmcConfig::new(2000, seed)).unwrap().log_evidence).collect();
    let mean = estimates.iter().sum::<f64>() / 5.0;
    let ev_err = (mean - exact).abs();

    let mpv: Vec<f64> = lg.analytic_posterior_mean().iter().copied().collect();
    let (cov, ok) = laplace_from_objective(|x: &[f64]| lg.neg_log_posterior(x), &mpv, &[Transform::Identity; 2]).unwrap();
    let analytic = lg.analytic_posterior_cov();
    let cov_err = (&cov - &analytic).amax() / analytic.amax();
    verdict(
        8,
        "TMCMC conjugate evidence within 0.05 (5 seeds, N_s = 2000); Laplace covariance within 1e-4",
        ev_err <= 0.05 && cov_err <= 1e-4 && ok,
        format!("lnZ exact={exact:.4} mean_est={mean:.4} err={ev_err:.4}; laplace rel_err={cov_err:.2e}"),
    )
}

fn criterion_9(sdof: &SdofFits) -> Verdict {
    let clean = sdof_dataset(1, None);
    let (_, gap) = split_gap(&sdof.data, 20.0, 30.0).unwrap();
    let run = |f: KernelFamily| {
        let i = sdof.index(f);
        let rec = reconstruct_missing(&sdof.classes[i], &sdof.data, &sdof.fits[i].0.mpv, 20.0, 30.0).unwrap();
        let sd = rec.std_devs();
        let mut covered = 0usize;
        let mut sq = 0.0;
        for (k, &row) in gap.iter().enumerate() {
            if (sdof.data.output[(row, 0)] - rec.mean[k]).abs() <= 2.0 * sd[k] {
                covered += 1;
            }
            sq += (clean.output[(row, 0)] - rec.mean[k]).powi(2);
        }
        (covered as f64 / gap.len() as f64, (sq / gap.len() as f64).sqrt())
    };
    let (cover, rms) = run(KernelFamily::Mmte);
    let (_, rms_gwn) = run(KernelFamily::Gwn);
    verdict(
        9,
        "gap [20, 30) s: +-2 SD coverage >= 90%, RMS error at most half the GWN baseline",
        cover >= 0.9 && rms <= 0.5 * rms_gwn,
        format!("coverage={cover:.3} rms_mmte={rms:.4} rms_gwn={rms_gwn:.4} ratio={:.3}", rms / rms_gwn),
    )
}

fn criterion_10(sdof: &SdofFits) -> Verdict {
    let i = sdof.index(KernelFamily::Mmte);
    let mpv = &sdof.fits[i].0.mpv;
    let dense_class = sdof.classes[i].clone();
    let mut trunc_class = dense_class.clone();
    trunc_class.truncation = TruncationPolicy::enabled(0.005).unwrap();
    let dense = UpdatingProblem::prefix(&dense_class, &sdof.data, SDOF_TRAIN).unwrap();
    let trunc = UpdatingProblem::prefix(&trunc_class, &sdof.data, SDOF_TRAIN).unwrap();
    let ld = dense.log_likelihood(&mpv.theta, &mpv.phi).unwrap();
    let lt = trunc.log_likelihood(&mpv.theta, &mpv.phi).unwrap();
    let retained = match trunc.covariance(&mpv.phi).unwrap().factor() {
        CovarianceFactor::Truncated(t) => t.retained(),
        _ => 0,
    };
    let rel = ((lt - ld) / ld).abs();
    verdict(
        10,
        "truncation at 0.5%: log-likelihood within 0.1% of dense, 10..=100 retained",
        rel < 1e-3 && (10..=100).contains(&retained),
        format!("dense={ld:.3} truncated={lt:.3} rel={rel:.2e} retained={retained}"),
    )
}

fn criterion_11(sdof: &SdofFits) -> Verdict {
    let class = &sdof.classes[sdof.index(KernelFamily::Gwn)];
    let p = UpdatingProblem::prefix(class, &sdof.data, SDOF_TRAIN).unwrap();
    let series = ResidualSeries::from_problem(&p, &[5.0]).unwrap();
    let sp = periodogram(&series[0]).unwrap();
    let peak = peak_pick(&sp, 1).first().copied().unwrap_or(f64::NAN);
    let target = 5f64.sqrt() / (2.0 * PI);
    let rel = (peak / target - 1.0).abs();
    verdict(11, "residual periodogram peak within 5% of sqrt(5)/(2 pi) Hz", rel <= 0.05, format!("peak={peak:.4} Hz target={target:.4} rel={rel:.4}"))
}

fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn artifacts() -> String {
    let data = sdof_dataset(3, Some(SDOF_NOISE));
    let class = sdof_class(KernelFamily::Se);
    let p = UpdatingProblem::prefix(&class, &data, 400).unwrap();
    let summary = identify(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    let samples = tmcmc_sample(&p, &TmcmcConfig::new(200, 5)).unwrap();
    let rows: Vec<usize> = (400..500).collect();
    let mix = mixture_predict(&samples, &p, data.input_history(), &rows, &MixtureOptions::default()).unwrap();
    let series = ResidualSeries::from_problem(&p, &summary.mpv.theta).unwrap();
    let psd = gpsid_core::diagnostics::psd_table(&periodogram(&series[0]).unwrap());
    digest(&[data.to_csv_string(), summary.to_json(), samples.to_table(), samples.summary_json(), mix.to_table(Some(2.0)), psd])
}

fn criterion_12() -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let first = pool.install(artifacts);
    let second = pool.install(artifacts);
    verdict(12, "identical seeds give hash-equal artifacts (serial)", first == second, format!("sha256 {first} vs {second}"))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: usize| wanted.is_empty() || wanted.contains(&id);
    let started = Instant::now();
    let mut results = Vec::new();

    let needs_sdof = [1, 3, 5, 9, 10, 11].iter().any(|&i| run(i));
    let sdof = needs_sdof.then(SdofFits::new);
    let mut five = FiveStory::new();

    if run(1) {
        results.push(criterion_1(sdof.as_ref().unwrap()));
    }
    if run(2) {
        results.push(criterion_2());
    }
    if run(3) {
        results.push(criterion_3(sdof.as_ref().unwrap()));
    }
    if run(5) {
        results.push(criterion_5(&mut five, sdof.as_ref().unwrap()));
    }
    if run(4) {
        results.push(criterion_4(&mut five));
    }
    if run(6) {
        results.push(criterion_6());
    }
    if run(7) {
        results.push(criterion_7());
    }
    if run(8) {
        results.push(criterion_8());
    }
    if run(9) {
        results.push(criterion_9(sdof.as_ref().unwrap()));
    }
    if run(10) {
        results.push(criterion_10(sdof.as_ref().unwrap()));
    }
    if run(11) {
        results.push(criterion_11(sdof.as_ref().unwrap()));
    }
    if run(12) {
        results.push(criterion_12());
    }

    results.sort_by_key(|v| v.id);
    let failed: Vec<&Verdict> = results.iter().filter(|v| !v.pass).collect();
    println!("\nacceptance summary ({:.0} s):", started.elapsed().as_secs_f64());
    for v in &results {
        println!("{}", v.line);
    }
    println!("{} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
