//! `gpsid`: run identification experiments described by a TOML config.

mod artifacts;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};

use config::Severity;
use run::Context;

/// Exit status for invalid configs, usage errors and missing artifacts.
const EXIT_INVALID: u8 = 1;
/// Exit status for numerical failures (a `failure.<command>.txt` is written).
const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "gpsid", version, about = "Bayesian structural identification with Gaussian-process prediction errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate (or import) the dataset into the output directory.
    Synthesize,
    /// Most probable value with its Laplace covariance.
    InferMpv,
    /// Posterior samples and evidence by transitional MCMC.
    InferTmcmc,
    /// Predict the held-out interval.
    Predict,
    /// Infill the configured gaps.
    Reconstruct,
    /// Rank candidate kernels and scan MMTE orders.
    Select,
    /// Residual ACF, PSD and spectral peaks at the MPV.
    Diagnose,
    /// Collect the artifacts into report.json.
    Report,
    /// Check the config without running anything.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synthesize => "synthesize",
            Command::InferMpv => "infer-mpv",
            Command::InferTmcmc => "infer-tmcmc",
            Command::Predict => "predict",
            Command::Reconstruct => "reconstruct",
            Command::Select => "select",
            Command::Diagnose => "diagnose",
            Command::Report => "report",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug)]
struct InvalidConfig(usize);

impl std::fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config has {} error(s)", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<gpsid_core::Error>().is_some_and(gpsid_core::Error::is_numerical))
}

fn load_checked(path: &Path, quiet: bool) -> Result<config::LoadedConfig> {
    let loaded = config::load(path)?;
    let findings = loaded.validate();
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    for f in &findings {
        if f.severity == Severity::Error || !quiet {
            eprintln!("{}: {f}", path.display());
        }
    }
    if errors > 0 {
        return Err(InvalidConfig(errors).into());
    }
    Ok(loaded)
}

fn execute(cli: &Cli, out: &mut Option<PathBuf>) -> Result<()> {
    let path = cli.config.as_deref().context("--config is required")?;
    let cfg = load_checked(path, cli.quiet)?;
    if let Command::Validate = cli.command {
        if !cli.quiet {
            println!("{}: ok", path.display());
        }
        return Ok(());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let dir = match (&cli.out, &cfg.config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.resolve(o),
        (None, None) => cfg.base_dir().join("out"),
    };
    *out = Some(dir.clone());
    let ctx = Context {
        seed: cli.seed.unwrap_or(cfg.config.seed),
        cfg,
        out: dir,
        threads: cli.threads,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Synthesize => run::synthesize(&ctx),
        Command::InferMpv => run::infer_mpv(&ctx),
        Command::InferTmcmc => run::infer_tmcmc(&ctx),
        Command::Predict => run::predict(&ctx),
        Command::Reconstruct => run::reconstruct(&ctx),
        Command::Select => run::select(&ctx),
        Command::Diagnose => run::diagnose(&ctx),
        Command::Report => run::report(&ctx),
        Command::Validate => unreachable!(),
    }
}

fn write_failure(dir: &Path, cli: &Cli, e: &anyhow::Error) -> Option<PathBuf> {
    let p = dir.join(format!("failure.{}.txt", cli.command.name()));
    let mut text = format!("command: {}\n", cli.command.name());
    if let Some(c) = &cli.config {
        text += &format!("config: {}\n", c.display());
    }
    if let Some(s) = cli.seed {
        text += &format!("seed override: {s}\n");
    }
    text += "error chain:\n";
    for c in e.chain() {
        text += &format!("  {c}\n");
    }
    std::fs::create_dir_all(dir).ok()?;
    std::fs::write(&p, text).ok()?;
    Some(p)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let mut out = None;
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<InvalidConfig>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_numerical(&e) {
                if let Some(p) = out.as_deref().and_then(|d| write_failure(d, &cli, &e)) {
                    eprintln!("diagnostics written to {}", p.display());
                }
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_INVALID)
            }
        }
    }
}
