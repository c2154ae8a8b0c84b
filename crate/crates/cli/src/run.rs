//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use gpsid_core::diagnostics::{acf_table, peak_pick, periodogram, psd_table, sample_acf, ResidualSeries};
use gpsid_core::dynamics::{modal_analysis, synthesize_dataset, GwnExcitation, TimeSeriesDataset};
use gpsid_core::inference::{identify, LaplaceSummary, ModelClass, MpvOptions, UpdatingProblem};
use gpsid_core::kernels::KernelFamily;
use gpsid_core::prediction::{conditional_predict, map_predict, mixture_predict, reconstruct_missing, split_gap, MixtureOptions, PredictiveDistribution};
use gpsid_core::rng::child_seed;
use gpsid_core::sampler::{tmcmc_sample, PosteriorSamples};
use gpsid_core::selection::{
    bic_parameter_count, bic_score, initial_frequencies, log_posterior_predictive_score, map_log_predictive,
    model_posterior_probabilities, score_table, select_mmte_order, EvidenceSource, ModelClassScore,
};
use serde_json::json;

use crate::artifacts::{sha256_hex, Stage};
use crate::config::{LoadedConfig, Method};

pub const DATASET: &str = "dataset.csv";
pub const MPV: &str = "mpv.json";
pub const SAMPLES: &str = "samples.csv";
pub const SAMPLES_SUMMARY: &str = "samples.summary.json";
pub const PREDICTION_CSV: &str = "prediction.csv";
pub const PREDICTION_JSON: &str = "prediction.json";
pub const SCORES: &str = "scores.csv";
pub const ORDER_SELECTION: &str = "order_selection.csv";
pub const PEAKS: &str = "peaks.csv";
pub const REPORT: &str = "report.json";

const TAG_SYNTHESIS: u64 = 1;
const TAG_TMCMC: u64 = 2;
const TAG_SELECT: u64 = 3;

/// Largest ACF lag written by `diagnose`.
const MAX_ACF_LAG: usize = 1000;
const MAX_PEAKS: usize = 10;

pub struct Context {
    pub cfg: LoadedConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub quiet: bool,
}

impl Context {
    fn stage(&self, command: &'static str) -> Result<Stage> {
        Stage::begin(&self.out, command, self.seed, sha256_hex(self.cfg.text.as_bytes()), self.threads)
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn mpv_options(&self) -> MpvOptions {
        MpvOptions {
            tol: self.cfg.config.inference.tol,
            max_iter: self.cfg.config.inference.max_iter,
            ..MpvOptions::default()
        }
    }

    /// The stage's dataset: `dataset.csv` in the output directory, else the
    /// configured file.
    fn dataset(&self, stage: &mut Stage) -> Result<TimeSeriesDataset> {
        if stage.path(DATASET).is_file() {
            stage.note_input(DATASET)?;
            return Ok(TimeSeriesDataset::load(&stage.path(DATASET))?);
        }
        match self.cfg.dataset_path() {
            Some(p) => TimeSeriesDataset::load(&p).with_context(|| format!("loading {}", p.display())),
            None => bail!("missing artifact {} (run `gpsid synthesize` first)", stage.path(DATASET).display()),
        }
    }

    fn train_rows(&self, ds: &TimeSeriesDataset) -> Result<Vec<usize>> {
        let p = &self.cfg.config.prediction;
        let end = ds.len() as f64 * ds.dt;
        let [t0, t1] = match (p.train, p.heldout) {
            (Some(t), _) => t,
            (None, Some(h)) => [0.0, h[0]],
            (None, None) => [0.0, end],
        };
        let rows = split_gap(ds, t0, t1)?.1;
        if rows.is_empty() {
            bail!("training interval [{t0}, {t1}) contains no samples");
        }
        Ok(rows)
    }

    fn heldout_rows(&self, ds: &TimeSeriesDataset) -> Result<Option<Vec<usize>>> {
        match self.cfg.config.prediction.heldout {
            None => Ok(None),
            Some([t0, t1]) => {
                let rows = split_gap(ds, t0, t1)?.1;
                if rows.is_empty() {
                    bail!("held-out interval [{t0}, {t1}) contains no samples");
                }
                Ok(Some(rows))
            }
        }
    }

    /// Fills MMTE starting frequencies from the residual spectrum when the
    /// config gives none.
    fn prepared(&self, mut class: ModelClass, ds: &TimeSeriesDataset, rows: &[usize]) -> Result<ModelClass> {
        if class.kernel.family == KernelFamily::Mmte && class.kernel.frequency_init.is_empty() {
            class.kernel.frequency_init = initial_frequencies(&class, ds, rows, class.kernel.order)?;
            log::info!("{}: starting frequencies {:?}", class.id, class.kernel.frequency_init);
        }
        Ok(class)
    }

    fn load_mpv(&self, stage: &mut Stage) -> Result<LaplaceSummary> {
        let p = stage.require(MPV, "infer-mpv")?;
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(LaplaceSummary::from_json(&text)?)
    }
}

pub fn synthesize(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("synthesize")?;
    let ds = match (&ctx.cfg.config.data.synthesis, ctx.cfg.dataset_path()) {
        (Some(s), _) => {
            let seed = child_seed(ctx.seed, &[TAG_SYNTHESIS]);
            stage.stage_seed = Some(seed);
            synthesize_dataset(&s.truth, GwnExcitation { std: s.input_std, seed }, s.dt, s.duration, s.noise_std)?
        }
        (None, Some(p)) => TimeSeriesDataset::load(&p).with_context(|| format!("loading {}", p.display()))?,
        (None, None) => bail!("config has neither data.path nor data.synthesis"),
    };
    ds.save(&stage.path(DATASET))?;
    stage.record(DATASET)?;
    let sidecar = TimeSeriesDataset::sidecar_path(Path::new(DATASET));
    stage.record(&sidecar.to_string_lossy())?;
    ctx.say(format!("dataset: {} samples x {} channels at dt = {} s", ds.len(), ds.n_outputs(), ds.dt));
    stage.finish()?;
    Ok(())
}

pub fn infer_mpv(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("infer-mpv")?;
    let ds = ctx.dataset(&mut stage)?;
    let rows = ctx.train_rows(&ds)?;
    let class = ctx.prepared(ctx.cfg.main_class(), &ds, &rows)?;
    let problem = UpdatingProblem::new(&class, &ds, rows)?;
    let summary = identify(&problem, &class.initial_split()?, &ctx.mpv_options())?;
    if !summary.converged {
        log::warn!("MPV search stopped after {} iterations without converging", summary.iterations);
    }
    stage.write(MPV, &summary.to_json())?;
    for ((name, v), sd) in summary.names().iter().zip(summary.mpv.joined()).zip(summary.std_devs()) {
        ctx.say(format!("{name:>14} = {v:.6e}  (sd {sd:.3e})"));
    }
    ctx.say(format!("ln p(Y|mpv) = {:.4}, converged = {}", summary.log_likelihood_at_mpv, summary.converged));
    stage.finish()?;
    Ok(())
}

pub fn infer_tmcmc(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("infer-tmcmc")?;
    let ds = ctx.dataset(&mut stage)?;
    let rows = ctx.train_rows(&ds)?;
    let class = ctx.prepared(ctx.cfg.main_class(), &ds, &rows)?;
    let problem = UpdatingProblem::new(&class, &ds, rows)?;
    let seed = child_seed(ctx.seed, &[TAG_TMCMC]);
    stage.stage_seed = Some(seed);
    let samples = tmcmc_sample(&problem, &ctx.cfg.config.inference.tmcmc.config(seed))?;
    samples.save(&stage.path(SAMPLES))?;
    stage.record(SAMPLES)?;
    stage.record(SAMPLES_SUMMARY)?;
    ctx.say(format!(
        "{} samples after {} stages, ln evidence = {:.4}",
        samples.len(),
        samples.stage_betas.len().saturating_sub(1),
        samples.log_evidence
    ));
    stage.finish()?;
    Ok(())
}

fn prediction_summary(dist: &PredictiveDistribution, ds: &TimeSeriesDataset, rows: &[usize], band: f64) -> serde_json::Value {
    let measured = ds.stacked_output(rows);
    let sd = dist.std_devs();
    let n = measured.len() as f64;
    let mut sq = 0.0;
    let mut inside = 0usize;
    for ((y, m), s) in measured.iter().zip(&dist.mean).zip(&sd) {
        sq += (y - m).powi(2);
        if (y - m).abs() <= band * s {
            inside += 1;
        }
    }
    json!({
        "provenance": dist.provenance,
        "n_outputs": dist.dim(),
        "band_sd": band,
        "rms_error": (sq / n).sqrt(),
        "coverage": inside as f64 / n,
        "mean_sd": sd.iter().sum::<f64>() / n,
    })
}

pub fn predict(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("predict")?;
    let ds = ctx.dataset(&mut stage)?;
    let Some(held) = ctx.heldout_rows(&ds)? else {
        bail!("predict needs prediction.heldout in the config");
    };
    let rows = ctx.train_rows(&ds)?;
    let class = ctx.cfg.main_class();
    let problem = UpdatingProblem::new(&class, &ds, rows)?;
    let dist = match ctx.cfg.config.inference.method {
        Method::Tmcmc => {
            let p = stage.require(SAMPLES, "infer-tmcmc")?;
            let samples = PosteriorSamples::load(&p)?;
            mixture_predict(&samples, &problem, ds.input_history(), &held, &MixtureOptions::default())?
        }
        Method::Mpv => {
            let summary = ctx.load_mpv(&mut stage)?;
            if summary.converged {
                map_predict(&summary, &problem, ds.input_history(), &held)?
            } else {
                log::warn!("predicting at an MPV that did not converge");
                conditional_predict(&problem, &summary.mpv.theta, &summary.mpv.phi, ds.input_history(), &held)?
            }
        }
    };
    let band = ctx.cfg.config.prediction.band;
    stage.write(PREDICTION_CSV, &dist.to_table(Some(band)))?;
    let summary = prediction_summary(&dist, &ds, &held, band);
    ctx.say(format!(
        "held-out rms error {:.4e}, {:.1}% inside ±{band} sd",
        summary["rms_error"].as_f64().unwrap_or(f64::NAN),
        100.0 * summary["coverage"].as_f64().unwrap_or(f64::NAN)
    ));
    stage.write(PREDICTION_JSON, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    stage.finish()?;
    Ok(())
}

pub fn reconstruct(ctx: &Context) -> Result<()> {
    let gaps = &ctx.cfg.config.prediction.gaps;
    if gaps.is_empty() {
        bail!("reconstruct needs at least one interval in prediction.gaps");
    }
    let mut stage = ctx.stage("reconstruct")?;
    let ds = ctx.dataset(&mut stage)?;
    let summary = ctx.load_mpv(&mut stage)?;
    let class = ctx.cfg.main_class();
    let band = ctx.cfg.config.prediction.band;
    for (k, &[t0, t1]) in gaps.iter().enumerate() {
        let dist = reconstruct_missing(&class, &ds, &summary.mpv, t0, t1)?;
        let rows = split_gap(&ds, t0, t1)?.1;
        let s = prediction_summary(&dist, &ds, &rows, band);
        ctx.say(format!(
            "gap {k} [{t0}, {t1}): rms error {:.4e}, {:.1}% inside ±{band} sd",
            s["rms_error"].as_f64().unwrap_or(f64::NAN),
            100.0 * s["coverage"].as_f64().unwrap_or(f64::NAN)
        ));
        stage.write(&format!("reconstruction_{k}.csv"), &dist.to_table(Some(band)))?;
    }
    stage.finish()?;
    Ok(())
}

pub fn select(ctx: &Context) -> Result<()> {
    let Some(sel) = ctx.cfg.config.selection.clone() else {
        bail!("select needs a [selection] block in the config");
    };
    let mut stage = ctx.stage("select")?;
    let ds = ctx.dataset(&mut stage)?;
    let rows = ctx.train_rows(&ds)?;
    let held = ctx.heldout_rows(&ds)?;
    let candidates: Vec<ModelClass> = if sel.candidates.is_empty() && sel.mmte_orders.is_empty() {
        vec![ctx.cfg.main_class()]
    } else {
        sel.candidates.iter().map(|c| ctx.cfg.model_class(&c.id, &c.kernel)).collect()
    };
    if !candidates.is_empty() {
        let mut scores = Vec::with_capacity(candidates.len());
        for (i, class) in candidates.into_iter().enumerate() {
            let class = ctx.prepared(class, &ds, &rows)?;
            let problem = UpdatingProblem::new(&class, &ds, rows.clone())?;
            let score = match ctx.cfg.config.inference.method {
                Method::Tmcmc => {
                    let seed = child_seed(ctx.seed, &[TAG_SELECT, i as u64]);
                    let samples = tmcmc_sample(&problem, &ctx.cfg.config.inference.tmcmc.config(seed))?;
                    let mut s = ModelClassScore::new(&class.id, samples.log_evidence, EvidenceSource::Tmcmc);
                    if let Some(h) = &held {
                        s.log_posterior_predictive = Some(log_posterior_predictive_score(&samples, &problem, h)?);
                    }
                    s
                }
                Method::Mpv => {
                    let summary = identify(&problem, &class.initial_split()?, &ctx.mpv_options())?;
                    let Some(ev) = summary.log_evidence else {
                        log::warn!("'{}' is not identifiable at its MPV; left out of the ranking", class.id);
                        continue;
                    };
                    let mut s = ModelClassScore::new(&class.id, ev, EvidenceSource::Laplace);
                    s.bic = Some(bic_score(summary.log_likelihood_at_mpv, bic_parameter_count(&problem), problem.n_data()));
                    if let Some(h) = &held {
                        s.log_posterior_predictive = Some(map_log_predictive(&summary, &problem, h)?);
                    }
                    s
                }
            };
            log::info!("{}: ln evidence = {:.4}", score.model_id, score.log_evidence);
            scores.push(score);
        }
        if scores.is_empty() {
            bail!("no candidate model class could be scored");
        }
        let use_predictive = sel.use_predictive && held.is_some();
        let probs = model_posterior_probabilities(&scores, use_predictive)?;
        for (s, p) in scores.iter().zip(&probs) {
            ctx.say(format!("{:>10}: ln evidence {:.4}, probability {p:.4}", s.model_id, s.log_evidence));
        }
        stage.write(SCORES, &score_table(&scores, &probs))?;
    }
    if !sel.mmte_orders.is_empty() {
        let choice = select_mmte_order(&ctx.cfg.main_class(), &ds, &rows, &sel.mmte_orders, &ctx.mpv_options())?;
        ctx.say(format!("MMTE order chosen by BIC: {}", choice.chosen));
        stage.write(ORDER_SELECTION, &choice.to_table())?;
    }
    stage.finish()?;
    Ok(())
}

pub fn diagnose(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("diagnose")?;
    let ds = ctx.dataset(&mut stage)?;
    let summary = ctx.load_mpv(&mut stage)?;
    let rows = ctx.train_rows(&ds)?;
    let class = ctx.cfg.main_class();
    let problem = UpdatingProblem::new(&class, &ds, rows)?;
    let mut peaks = String::from("channel,rank,frequency_hz,omega_rad_s\n");
    for series in ResidualSeries::from_problem(&problem, &summary.mpv.theta)? {
        let lag = (series.len() - 1).min(MAX_ACF_LAG);
        let acf = sample_acf(&series, lag)?;
        stage.write(&format!("acf_{}.csv", series.label), &acf_table(&acf, series.dt))?;
        let spec = periodogram(&series)?;
        stage.write(&format!("psd_{}.csv", series.label), &psd_table(&spec))?;
        let found = peak_pick(&spec, MAX_PEAKS);
        for (r, f) in found.iter().enumerate() {
            let _ = writeln!(peaks, "{},{},{f:.10e},{:.10e}", series.label, r + 1, 2.0 * std::f64::consts::PI * f);
        }
        let listed: Vec<String> = found.iter().map(|f| format!("{f:.3}")).collect();
        ctx.say(format!("{}: residual peaks at [{}] Hz", series.label, listed.join(", ")));
    }
    stage.write(PEAKS, &peaks)?;
    stage.finish()?;
    Ok(())
}

fn read_json(p: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

fn read_table(p: &Path) -> Result<Vec<serde_json::Map<String, serde_json::Value>>> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(h, v)| {
                    let val = v.parse::<f64>().ok().and_then(|x| serde_json::Number::from_f64(x).map(Into::into));
                    (h.to_string(), val.unwrap_or_else(|| serde_json::Value::String(v.to_string())))
                })
                .collect()
        })
        .collect())
}

pub fn report(ctx: &Context) -> Result<()> {
    let mut stage = ctx.stage("report")?;
    let has_mpv = stage.path(MPV).is_file();
    let has_samples = stage.path(SAMPLES_SUMMARY).is_file();
    if !has_mpv && !has_samples {
        bail!(
            "missing artifact: neither {} nor {} exists (run `gpsid infer-mpv` or `gpsid infer-tmcmc` first)",
            stage.path(MPV).display(),
            stage.path(SAMPLES).display()
        );
    }
    let mut report = serde_json::Map::new();
    report.insert("seed".into(), ctx.seed.into());
    if has_mpv {
        let summary = ctx.load_mpv(&mut stage)?;
        let mut mpv = serde_json::Map::new();
        for ((name, v), sd) in summary.names().into_iter().zip(summary.mpv.joined()).zip(summary.std_devs()) {
            mpv.insert(name, json!({ "value": v, "std_dev": sd }));
        }
        let model = ctx.cfg.main_class().structure.instantiate(&summary.mpv.theta)?;
        let modal = modal_analysis(&model)?;
        report.insert(
            "mpv".into(),
            json!({
                "parameters": mpv,
                "converged": summary.converged,
                "identifiable": summary.identifiable,
                "log_likelihood": summary.log_likelihood_at_mpv,
                "log_evidence_laplace": summary.log_evidence,
                "natural_frequencies_rad_s": modal.frequencies,
            }),
        );
    }
    if has_samples {
        stage.note_input(SAMPLES_SUMMARY)?;
        report.insert("tmcmc".into(), read_json(&stage.path(SAMPLES_SUMMARY))?);
    }
    if stage.path(PREDICTION_JSON).is_file() {
        stage.note_input(PREDICTION_JSON)?;
        report.insert("prediction".into(), read_json(&stage.path(PREDICTION_JSON))?);
    }
    for (key, file) in [("scores", SCORES), ("order_selection", ORDER_SELECTION), ("residual_peaks", PEAKS)] {
        if stage.path(file).is_file() {
            stage.note_input(file)?;
            report.insert(key.into(), read_table(&stage.path(file))?.into());
        }
    }
    stage.write(REPORT, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    ctx.say(format!("wrote {}", stage.path(REPORT).display()));
    stage.finish()?;
    Ok(())
}
