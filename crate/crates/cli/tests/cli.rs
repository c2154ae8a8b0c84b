use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"schema_version = 1
seed = 7

[model.template]
masses = [1.0]
story_stiffnesses = [5.0]
observed_dofs = [0]
damping = { kind = "viscous_ratio", zeta = 0.04 }
excitation = { kind = "force", dof = 0 }

[[model.unknowns]]
name = "k"
kind = { kind = "stiffness", story = 0 }
prior = { kind = "uniform", lo = 1.0, hi = 10.0 }
init = 4.5

[kernel]
family = "mmte"
variance = { prior = { kind = "log_uniform", lo = 1e-6, hi = 1.0 }, init = 1e-3 }
inv_length_sq = { prior = { kind = "log_uniform", lo = 1e-3, hi = 1e2 }, init = 0.1 }
frequency = { prior = { kind = "log_uniform", lo = 0.5, hi = 20.0 }, init = 2.2 }
noise = { prior = { kind = "log_uniform", lo = 1e-8, hi = 1.0 }, init = 1e-3 }

[data.synthesis]
dt = 0.02
duration = 16.0
noise_std = 0.05

[data.synthesis.truth]
masses = [1.0]
story_stiffnesses = [5.0]
observed_dofs = [0]
damping = { kind = "viscous_ratio", zeta = 0.05 }
excitation = { kind = "force", dof = 0 }

[inference]
method = "mpv"
max_iter = 30

[inference.tmcmc]
n_samples = 100
max_stages = 100

[prediction]
train = [0.0, 8.0]
heldout = [8.0, 16.0]
gaps = [[10.0, 11.0]]

[selection]

[[selection.candidates]]
id = "gwn"
kernel = { family = "gwn", noise = { prior = { kind = "log_uniform", lo = 1e-8, hi = 1.0 }, init = 1e-3 } }

[[selection.candidates]]
id = "se"
[selection.candidates.kernel]
family = "se"
variance = { prior = { kind = "log_uniform", lo = 1e-6, hi = 1.0 }, init = 1e-3 }
inv_length_sq = { prior = { kind = "log_uniform", lo = 1e-3, hi = 1e2 }, init = 1.0 }
noise = { prior = { kind = "log_uniform", lo = 1e-8, hi = 1.0 }, init = 1e-3 }
"#;

fn gpsid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpsid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("gpsid runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = gpsid(args);
    assert!(
        out.status.success(),
        "gpsid {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Experiment {
    dir: TempDir,
}

impl Experiment {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), config).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("exp.toml").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.config();
        let o = self.out(out).display().to_string();
        let mut args = vec![cmd, "--config", &cfg, "--out", &o, "--quiet"];
        args.extend_from_slice(extra);
        gpsid(&args)
    }
}

fn manifest(dir: &Path, cmd: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("manifest.{cmd}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn validate_accepts_the_example_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["sdof.toml", "five_story.toml"] {
        let p = root.join(name).display().to_string();
        run_ok(&["validate", "--config", &p, "--quiet"]);
    }
}

#[test]
fn validation_errors_name_the_line() {
    let bad = BASE.replace("lo = 1.0, hi = 10.0", "lo = 10.0, hi = 1.0");
    let e = Experiment::new(&bad);
    let o = gpsid(&["validate", "--config", &e.config()]);
    assert_eq!(o.status.code(), Some(1));
    let line = BASE.lines().position(|l| l == "name = \"k\"").unwrap() + 1;
    let msg = stderr(&o);
    assert!(msg.contains(&format!("line {line}:")) && msg.contains("'k'"), "{msg}");
}

#[test]
fn unknown_keys_are_parse_errors_with_a_line() {
    let bad = BASE.replace("max_iter = 30", "max_iter = 30\nmax_iters = 5");
    let e = Experiment::new(&bad);
    let o = gpsid(&["validate", "--config", &e.config()]);
    assert_eq!(o.status.code(), Some(1));
    let line = bad.lines().position(|l| l.starts_with("max_iters")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!(":{line}:")), "{}", stderr(&o));
}

#[test]
fn overlapping_splits_and_bad_units_are_rejected() {
    let bad = BASE.replace("heldout = [8.0, 16.0]", "heldout = [6.0, 16.0]").replace("dt = 0.02", "dt = -0.02");
    let e = Experiment::new(&bad);
    let o = gpsid(&["validate", "--config", &e.config()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("must be positive"), "{msg}");
    assert!(msg.contains("overlaps"), "{msg}");
}

#[test]
fn report_without_artifacts_is_a_missing_artifact_error() {
    let e = Experiment::new(BASE);
    let o = e.run("report", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));
    assert!(!e.out("out").join(".gpsid.lock").exists());
}

#[test]
fn infer_before_synthesize_is_a_missing_artifact_error() {
    let e = Experiment::new(BASE);
    let o = e.run("infer-mpv", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));
}

#[test]
fn a_held_lock_blocks_the_run() {
    let e = Experiment::new(BASE);
    fs::create_dir_all(e.out("out")).unwrap();
    fs::write(e.out("out").join(".gpsid.lock"), "1").unwrap();
    let o = e.run("synthesize", "out", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("locked"), "{}", stderr(&o));
}

#[test]
fn numerical_failures_exit_2_with_a_diagnostics_file() {
    let cfg = BASE.replace("max_stages = 100", "max_stages = 1");
    let e = Experiment::new(&cfg);
    assert!(e.run("synthesize", "out", &[]).status.success());
    let o = e.run("infer-tmcmc", "out", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let diag = fs::read_to_string(e.out("out").join("failure.infer-tmcmc.txt")).unwrap();
    assert!(diag.contains("tempering stopped"), "{diag}");
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let e = Experiment::new(BASE);
    let out = e.out("out");
    for cmd in ["synthesize", "infer-mpv", "predict", "reconstruct", "diagnose", "select", "report"] {
        let o = e.run(cmd, "out", &[]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let m = manifest(&out, cmd);
        assert_eq!(m["command"], cmd);
        assert_eq!(m["seed"], 7);
        for (name, hash) in m["artifacts"].as_object().unwrap() {
            let bytes = fs::read(out.join(name)).unwrap();
            let h = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
            assert_eq!(hash.as_str().unwrap(), h, "{cmd}: {name}");
        }
    }
    for f in [
        "dataset.csv",
        "dataset.meta.json",
        "mpv.json",
        "prediction.csv",
        "prediction.json",
        "reconstruction_0.csv",
        "acf_dof0.csv",
        "psd_dof0.csv",
        "peaks.csv",
        "scores.csv",
        "report.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let k = report["mpv"]["parameters"]["k"]["value"].as_f64().unwrap();
    assert!((k - 5.0).abs() < 0.5, "k = {k}");
    assert_eq!(report["scores"].as_array().unwrap().len(), 2);
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("prediction.json")).unwrap()).unwrap();
    assert!(p["coverage"].as_f64().unwrap() > 0.7);
    assert!(!out.join(".gpsid.lock").exists());
}

fn artifact_hashes(dir: &Path, cmds: &[&str]) -> Vec<(String, String)> {
    cmds.iter()
        .flat_map(|c| {
            manifest(dir, c)["artifacts"]
                .as_object()
                .unwrap()
                .iter()
                .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn artifacts_are_identical_across_runs_and_thread_counts() {
    let e = Experiment::new(BASE);
    let cmds = ["synthesize", "infer-mpv", "infer-tmcmc", "predict"];
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        for cmd in cmds {
            let o = e.run(cmd, out, &["--threads", threads]);
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        }
    }
    let a = artifact_hashes(&e.out("a"), &cmds);
    assert_eq!(a, artifact_hashes(&e.out("b"), &cmds));
    assert_eq!(a, artifact_hashes(&e.out("c"), &cmds));
}

#[test]
fn seed_flag_changes_the_synthesized_data() {
    let e = Experiment::new(BASE);
    assert!(e.run("synthesize", "a", &[]).status.success());
    assert!(e.run("synthesize", "b", &["--seed", "8"]).status.success());
    let a = fs::read(e.out("a").join("dataset.csv")).unwrap();
    let b = fs::read(e.out("b").join("dataset.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(manifest(&e.out("b"), "synthesize")["seed"], 8);
}
