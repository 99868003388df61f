use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn adapool(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adapool"))
        .args(args)
        .current_dir(cwd)
        .env("ADAPOOL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    /// Ten small synthetic series and a fast configuration.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        ok(&adapool(
            &["synth", "--out", "syn", "--n", "10", "--t", "120", "--p", "2", "--k-true", "2", "--seed", "3"],
            root,
        ));
        let config = root.join("run.cfg");
        fs::write(
            &config,
            format!(
                "# fast settings\ndata = {}\nsplit = 80,20,20\nout_dir = {}\nwindow = 4\nhidden = 2\n\
                 epochs_global = 1\nepochs_proto = 1\nmax_iters = 1\nseeds = 0,1\ncandidates = 2..3\n{extra}",
                root.join("syn/data").display(),
                root.join("runs").display()
            ),
        )
        .unwrap();
        Fixture { dir, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all: Vec<&str> = args.to_vec();
        all.extend(["--config", self.config.to_str().unwrap()]);
        adapool(&all, self.dir.path())
    }

    fn run_dir(&self) -> PathBuf {
        self.dir.path().join("runs/run")
    }
}

#[test]
fn synth_writes_data_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(&adapool(&["synth", "--out", "s", "--n", "6", "--t", "50", "--p", "3", "--k-true", "2"], dir.path()));
    let files: Vec<_> = fs::read_dir(dir.path().join("s/data")).unwrap().collect();
    assert_eq!(files.len(), 6);
    let labels = fs::read_to_string(dir.path().join("s/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 7);
    ok(&adapool(&["synth", "--out", "p", "--n", "4", "--t", "40", "--packed"], dir.path()));
    assert!(dir.path().join("p/data.mts").exists());
}

#[test]
fn select_k_emits_one_row_per_candidate_and_seed() {
    let fx = Fixture::new("candidates = 2..9\nseeds = 0,1,2,3,4\nmethods = GLOBAL,OURS\n");
    ok(&fx.run(&["prepare"]));
    let stdout = ok(&fx.run(&["select-k"]));
    assert!(stdout.contains("K*="));
    let csv = fs::read_to_string(fx.run_dir().join("selection_ours.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 40);
}

#[test]
fn full_pipeline_and_single_use_test() {
    let fx = Fixture::new("methods = GLOBAL,INDIVIDUAL,FEAT-KMEANS,RANDOM-BALANCED,OURS\n");
    ok(&fx.run(&["prepare"]));
    // evaluating before fitting is a protocol error, not a TEST read
    let early = fx.run(&["evaluate"]);
    assert_eq!(early.status.code(), Some(5));
    ok(&fx.run(&["train", "--k", "2"]));
    let table = ok(&fx.run(&["evaluate"]));
    assert!(table.contains("| OURS |"));
    for f in ["metrics.csv", "report.json", "errors.csv", "trajectories.csv", "manifest.json", "global_refit.pcm"] {
        assert!(fx.run_dir().join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(fx.run_dir().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 5 * 3);
    assert!(metrics.lines().next().unwrap().contains("ben_pct,fb_pct"));

    let again = fx.run(&["evaluate"]);
    assert_eq!(again.status.code(), Some(5), "{}", String::from_utf8_lossy(&again.stderr));

    // re-preparing an evaluated run is refused as well
    assert_eq!(fx.run(&["prepare"]).status.code(), Some(5));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.run_dir().join("manifest.json")).unwrap()).unwrap();
    assert!(!manifest["test_evaluated"].is_null());

    let plain = ok(&adapool(&["report", fx.run_dir().to_str().unwrap()], fx.dir.path()));
    let scaled = ok(&adapool(&["report", "--paper-scale", fx.run_dir().to_str().unwrap()], fx.dir.path()));
    let mse = |text: &str| -> f64 {
        let line = text.lines().find(|l| l.contains("| GLOBAL | 1 |")).unwrap();
        line.split('|').map(str::trim).nth(5).unwrap().parse().unwrap()
    };
    let ratio = mse(&scaled) / mse(&plain);
    assert!((ratio - 100.0).abs() < 0.5, "ratio {ratio}");

    let seg = fx.dir.path().join("seg.csv");
    let rows: Vec<String> =
        (0..12).map(|t| format!("{:.3},{:.3}", (t as f64 * 0.3).sin(), (t as f64 * 0.2).cos())).collect();
    fs::write(&seg, format!("x0,x1\n{}\n", rows.join("\n"))).unwrap();
    let routed = ok(&fx.run(&["forecast-new", "--segment", seg.to_str().unwrap(), "--horizon", "3"]));
    let v: serde_json::Value = serde_json::from_str(&routed).unwrap();
    let path = v["forecast"].as_array().unwrap();
    assert_eq!(path.len(), 3);
    assert!(path.iter().all(|step| step.as_array().unwrap().len() == 2));
    assert!(v["route"].is_object() || v["route"].is_string());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let fx = Fixture::new("learning_rate = 0.1\n");
    let out = fx.run(&["prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn bad_override_is_a_config_error() {
    let fx = Fixture::new("");
    assert_eq!(fx.run(&["prepare", "--set", "gamma=-1"]).status.code(), Some(2));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "data = nowhere\nsplit = 10,10,10\n").unwrap();
    let out = adapool(&["prepare", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn help_documents_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&adapool(&["--help"], dir.path()));
    for key in ["epochs_global", "gamma", "assign_horizons", "target_coverage", "ADAPOOL_THREADS"] {
        assert!(help.contains(key), "help lacks {key}");
    }
}
