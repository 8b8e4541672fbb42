use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use slhlab::scenario::Scenario;

const CAVITY: &str = r#"
name = "cavity"
seed = 11
outputs = ["a", "n"]

[system]
kind = "cavity"
dim = 6

[slh]
type = "static"
phase = 0.7
l = "1.3*a"
h = "0.4*n"

[sim]
dt = 0.01
T = 0.5
n_traj = 40
unravelling = "homodyne"
initial = { kind = "coherent", alpha = [0.8, 0.2] }
"#;

const FEEDBACK: &str = r#"
name = "coupling"
seed = 5
outputs = ["a"]

[system]
kind = "cavity"
dim = 5

[slh]
type = "coupling_feedback"
gamma = 1.0
lambda = 0.1

[sim]
dt = 0.01
T = 0.3
n_traj = 70
unravelling = "homodyne"
initial = { kind = "coherent", alpha = [0.5, 0.0] }

[dilation]
n_bins = 3
bin_dim = 2
dt = 0.1
"#;

fn slhlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slhlab")).args(args).env_remove("SLHLAB_OUT").output().unwrap()
}

fn scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn flatten(v: &Value) -> Vec<f64> {
    match v {
        Value::Number(x) => vec![x.as_f64().unwrap()],
        Value::Array(xs) => xs.iter().flat_map(flatten).collect(),
        Value::Object(m) => m.values().flat_map(flatten).collect(),
        _ => vec![],
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_ito_reports_vanishing_defect() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "c.toml", CAVITY);
    let out = dir.path().join("out");
    let o = slhlab(&["verify-ito", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("isometry_defect_max"));
    let r = report(&out);
    assert!(r["results"]["isometry_defect_max"].as_f64().unwrap() < 1e-10);
    assert!(r["results"]["coisometry_defect_max"].as_f64().unwrap() < 1e-10);
    assert_eq!(r["results"]["table_self_test"]["passed"], true);
    assert!(out.join("ito_defects.csv").exists());
}

#[test]
fn analyze_linear_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lin");
    let o = slhlab(&["analyze-linear", "--gamma", "1", "--lambda", "0.1", "--omega", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let mut ev: Vec<[f64; 2]> = r["results"]["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|z| [z[0].as_f64().unwrap(), z[1].as_f64().unwrap()])
        .collect();
    ev.sort_by(|a, b| b[0].total_cmp(&a[0]));
    for (z, want) in ev.iter().zip([0.0, -0.3, -0.5]) {
        assert!((z[0] - want).abs() < 1e-10 && z[1].abs() < 1e-10, "{z:?}");
    }
    assert_eq!(r["results"]["stable"], true);
    let dev = r["results"]["printed_comparison"]["at_zero"]["f"].as_f64().unwrap();
    assert!(dev > 1.0, "printed f(0) = {dev}");
    let kernels = fs::read_to_string(out.join("kernels.csv")).unwrap();
    assert!(kernels.starts_with("t,f_re,f_im,"));
    assert!(out.join("means.csv").exists());
}

#[test]
fn analyze_linear_reads_scenario_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "f.toml", FEEDBACK);
    let out = dir.path().join("lin");
    let o = slhlab(&["analyze-linear", "--scenario", s(&sc), "--omega", "0.5", "--t-max", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let p = &report(&out)["config"]["parameters"];
    assert_eq!(p["gamma"], 1.0);
    assert_eq!(p["lambda"], 0.1);
    assert_eq!(p["omega"], 0.5);
    assert_eq!(report(&out)["results"]["stable"], false);
}

#[test]
fn negative_gamma_exits_one_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "bad.toml", &FEEDBACK.replace("gamma = 1.0", "gamma = -1.0"));
    let o = slhlab(&["simulate", "--scenario", s(&sc), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("slh.gamma"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn malformed_toml_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "bad.toml", &CAVITY.replace("dim = 6", "dim = \"six\""));
    let o = slhlab(&["verify-ito", "--scenario", s(&sc), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn jump_probability_cap_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "decay"
seed = 1
outputs = ["sz"]
[system]
kind = "qubit"
[slh]
type = "static"
l = "sm"
[sim]
dt = 0.5
T = 1.0
n_traj = 4
unravelling = "counting"
initial = { kind = "fock", n = 1 }
"#;
    let sc = scenario(dir.path(), "d.toml", text);
    let o = slhlab(&["simulate", "--scenario", s(&sc), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("jump probability"));
}

#[test]
fn simulate_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "f.toml", FEEDBACK);
    let mut texts = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = slhlab(&["simulate", "--scenario", s(&sc), "--threads", threads, "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        texts.push((fs::read(out.join("ensemble.csv")).unwrap(), fs::read(out.join("report.json")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn seed_override_changes_output_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "c.toml", CAVITY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(slhlab(&["simulate", "--scenario", s(&sc), "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(slhlab(&["simulate", "--scenario", s(&sc), "--seed", "99", "--out", s(&b)]).status.code(), Some(0));
    assert_ne!(fs::read(a.join("ensemble.csv")).unwrap(), fs::read(b.join("ensemble.csv")).unwrap());
    assert_eq!(report(&b)["seed"], 99);
    assert_eq!(report(&b)["config"]["scenario"]["seed"], 99);
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "c.toml", CAVITY);
    let first = dir.path().join("first");
    let o = slhlab(&["simulate", "--scenario", s(&sc), "--seed", "4", "--dt", "0.02", "--out", s(&first)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&first);
    assert_eq!(r["version"], slhlab::VERSION);
    let echoed: Scenario = serde_json::from_value(r["config"]["scenario"].clone()).unwrap();
    let replay = scenario(dir.path(), "replay.toml", &toml::to_string(&echoed).unwrap());
    let second = dir.path().join("second");
    assert_eq!(slhlab(&["simulate", "--scenario", s(&replay), "--out", s(&second)]).status.code(), Some(0));
    assert_eq!(fs::read(first.join("ensemble.csv")).unwrap(), fs::read(second.join("ensemble.csv")).unwrap());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "c.toml", CAVITY);
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_slhlab"))
        .args(["verify-ito", "--scenario", s(&sc)])
        .env("SLHLAB_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("report.json").exists());
}

#[test]
fn verify_dilation_coupling_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), "f.toml", FEEDBACK);
    let out = dir.path().join("dil");
    let o = slhlab(&["verify-dilation", "--scenario", s(&sc), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &report(&out)["results"];
    assert_eq!(r["passed"], true);
    assert!(r["picture_equivalence_defect"].as_f64().unwrap() < 1e-9);
    assert!(r["nondemolition"]["max_commutator"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["quadrature"]["residuals"].as_array().unwrap().len(), 3);
}

#[test]
fn verify_dilation_rejects_scattering() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{CAVITY}\n[dilation]\nn_bins = 2\nbin_dim = 2\ndt = 0.1\n");
    let sc = scenario(dir.path(), "c.toml", &text);
    let o = slhlab(&["verify-dilation", "--scenario", s(&sc), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compose_series_of_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let first = scenario(dir.path(), "a.toml", CAVITY);
    let second = scenario(dir.path(), "b.toml", &CAVITY.replace("phase = 0.7", "phase = -0.2").replace("1.3*a", "0.5*a"));
    let out = dir.path().join("cmp");
    let o = slhlab(&["compose", "--scenario", s(&first), "--with", s(&second), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["results"]["valid"], true);
    let a = Scenario::load(&first).unwrap().coefficients().unwrap().base().clone();
    let b = Scenario::load(&second).unwrap().coefficients().unwrap().base().clone();
    let g = slhlab::slh::series_product(&b, &a).unwrap();
    let (got, want) = (flatten(&r["results"]["triple"]), flatten(&slhlab::artifacts::triple_json(&g)));
    assert_eq!(got.len(), want.len());
    assert!(got.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));
    let s00 = &r["results"]["triple"]["S"][0][0][0][0];
    let phase = 0.5f64;
    assert!((s00[0].as_f64().unwrap() - phase.cos()).abs() < 1e-14);
}

#[test]
fn compose_concatenate_doubles_multiplicity() {
    let dir = tempfile::tempdir().unwrap();
    let first = scenario(dir.path(), "a.toml", CAVITY);
    let out = dir.path().join("cmp");
    let o = slhlab(&[
        "compose", "--scenario", s(&first), "--with", s(&first), "--operation", "concatenate", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&out)["results"]["triple"]["multiplicity"], 2);
}
