//! Runs the `selfex` binary on small generated data sets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn selfex(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfex"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed: {}", stderr(&o));
    o
}

const SIM_CONFIG: &str = r#"
model = "scse"
[simulate]
n_time = 15
torus = [4, 4]
theta1 = 0.2
sigma2 = 0.4
eta = 0.2
beta = [-0.5]
"#;

/// Simulates into `<tmp>/data` from a config file with relative paths.
fn simulated(seed: &str) -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("data")).unwrap();
    fs::write(tmp.path().join("sim.toml"), format!("out = \"data\"\n{SIM_CONFIG}")).unwrap();
    ok(selfex(&["simulate", "--config", "sim.toml", "--seed", seed], tmp.path()));
    tmp
}

#[test]
fn simulate_is_reproducible() {
    let a = simulated("9");
    let b = simulated("9");
    let c = simulated("10");
    for file in ["adjacency.txt", "panel.csv", "covariates.csv", "truth.toml"] {
        let read = |t: &TempDir| fs::read(t.path().join("data").join(file)).unwrap();
        assert_eq!(read(&a), read(&b), "{file}");
    }
    let panel = |t: &TempDir| fs::read(t.path().join("data/panel.csv")).unwrap();
    assert_ne!(panel(&a), panel(&c));
    let truth = fs::read_to_string(a.path().join("data/truth.toml")).unwrap();
    assert!(truth.contains("seed = 9"));
}

#[test]
fn missing_output_directory_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = selfex(&["simulate", "--study", "scse-sec4", "--seed", "1", "--out", "nowhere"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn simulate_requires_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = selfex(&["simulate", "--study", "scse-sec4", "--out", "."], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn malformed_panel_reports_the_line() {
    let tmp = simulated("3");
    let data = tmp.path().join("data");
    let text = fs::read_to_string(data.join("panel.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[5] = "0,3,many".into();
    fs::write(data.join("panel.csv"), lines.join("\n")).unwrap();
    let o = selfex(
        &["fit", "--adjacency", "data/adjacency.txt", "--panel", "data/panel.csv", "--out", "data"],
        tmp.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));
}

#[test]
fn assess_and_report_need_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let o = selfex(&["report", "--out", "empty"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("assessment.csv"), "{}", stderr(&o));

    let o = selfex(&["assess", "--fit", "empty", "--out", "empty", "--seed", "1"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("grid.json"), "{}", stderr(&o));
}

#[test]
fn fit_assess_report_two_models() {
    let tmp = simulated("5");
    let root = tmp.path();
    for (dir, exc) in [("on", "on"), ("off", "off")] {
        fs::create_dir(root.join(dir)).unwrap();
        let o = ok(selfex(
            &[
                "fit",
                "--excitation",
                exc,
                "--adjacency",
                "data/adjacency.txt",
                "--panel",
                "data/panel.csv",
                "--out",
                dir,
                "--threads",
                "2",
            ],
            root,
        ));
        assert!(String::from_utf8_lossy(&o.stdout).contains("theta1"));
        for f in ["hyperparameters.csv", "latent.csv", "grid.json", "run_config.toml"] {
            assert!(root.join(dir).join(f).is_file(), "{dir}/{f}");
        }
    }
    let off_table = fs::read_to_string(root.join("off/hyperparameters.csv")).unwrap();
    assert!(off_table.lines().any(|l| l.starts_with("eta,-")), "{off_table}");

    fs::create_dir(root.join("cmp")).unwrap();
    let o = selfex(&["assess", "--fit", "on", "--fit", "off", "--out", "cmp", "--seed", "2", "--n-rep", "50"], root);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("100"), "{}", stderr(&o));

    ok(selfex(&["assess", "--fit", "on", "--fit", "off", "--out", "cmp", "--seed", "2"], root));
    let csv = fs::read_to_string(root.join("cmp/assessment.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "model,dic,p_eff,deviance,ppp_max,ppp_zeros");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("scse+eta,") && rows[2].starts_with("scse,"));

    let o = ok(selfex(&["report", "--out", "cmp"], root));
    let summary = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(summary.contains("Preferred model by DIC"), "{summary}");
    assert!(root.join("cmp/marginal_scse-eta_theta1.csv").is_file());
    assert!(root.join("cmp/marginal_scse_sigma2.csv").is_file());
}
