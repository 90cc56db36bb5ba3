use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use poseprior::priors::{load_model, log_prob_batch};
use poseprior::posedata::load_pose_csv;

const SPEC: &str = r#"{
  "dims": [
    {"kind": "normal", "mu": 0.1, "sigma": 0.3},
    {"kind": "gamma", "alpha": 3.0, "beta": 4.0, "sign": -1.0},
    {"kind": "normal", "mu": -0.2, "sigma": 0.2},
    {"kind": "mixture", "weight": 0.5, "mu1": -0.6, "sigma1": 0.1, "mu2": 0.6, "sigma2": 0.1},
    {"kind": "uniform", "lo": -0.4, "hi": 0.4},
    {"kind": "normal", "mu": 0.0, "sigma": 0.5}
  ],
  "count": 400
}"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poseprior")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cli(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SPEC).unwrap();
    ok(dir.path(), &["gen", "--spec", "spec.json", "--seed", "7", "--out", "d.csv"]);
    dir
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn gen_is_byte_identical() {
    let dir = setup();
    ok(dir.path(), &["gen", "--spec", "spec.json", "--seed", "7", "--out", "again.csv"]);
    assert_eq!(fs::read(dir.path().join("d.csv")).unwrap(), fs::read(dir.path().join("again.csv")).unwrap());
    let stdout = ok(dir.path(), &["gen", "--spec", "spec.json", "--seed", "7"]).stdout;
    assert_eq!(stdout, fs::read(dir.path().join("d.csv")).unwrap());
    let other = ok(dir.path(), &["gen", "--spec", "spec.json", "--seed", "8"]).stdout;
    assert_ne!(stdout, other);
}

#[test]
fn eval_matches_library() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["fit", "--model", "mvn", "--data", "d.csv", "--out", "m.json"]);
    let report = json(&ok(p, &["eval", "--model", "m.json", "--data", "d.csv"]));
    let (model, _) = load_model(&p.join("m.json")).unwrap();
    let data = load_pose_csv(&p.join("d.csv")).unwrap();
    let lib = log_prob_batch(&model, &data.samples).unwrap();
    let cli: Vec<f64> = report["log_prob"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(cli, lib);
    let mean = report["mean"].as_f64().unwrap();
    assert!((mean - lib.iter().sum::<f64>() / lib.len() as f64).abs() <= 1e-12);
    assert_eq!(report["count"], 400);
}

#[test]
fn every_fit_kind_evaluates() {
    let dir = setup();
    let p = dir.path();
    for kind in ["mvn", "gamma", "gmm", "box"] {
        let file = format!("{kind}.json");
        ok(p, &["fit", "--model", kind, "--k", "2", "--data", "d.csv", "--out", &file]);
        let report = json(&ok(p, &["eval", "--model", &file, "--data", "d.csv"]));
        assert!(report["mean"].as_f64().is_some(), "{kind}");
    }
}

#[test]
fn temporal_fit_and_eval_on_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("seq.json"),
        r#"{"dims": [{"kind": "normal", "mu": 0.0, "sigma": 0.1},
                     {"kind": "normal", "mu": 0.3, "sigma": 0.1},
                     {"kind": "normal", "mu": -0.3, "sigma": 0.1}],
            "count": 120,
            "sequence": {"dt": 0.0333, "velocity": [0.5, 0.0, -0.2], "noise": 0.002}}"#,
    )
    .unwrap();
    ok(p, &["gen", "--spec", "seq.json", "--seed", "1", "--out", "s.csv"]);
    assert!(fs::read_to_string(p.join("s.csv")).unwrap().lines().nth(1).unwrap().starts_with("time_s,"));
    ok(p, &["fit", "--model", "temporal", "--data", "s.csv", "--out", "t.json"]);
    let report = json(&ok(p, &["eval", "--model", "t.json", "--data", "s.csv"]));
    assert_eq!(report["count"], 119);
    assert_eq!(report["model_type"], "temporal_gmm");
}

#[test]
fn usage_errors_exit_one() {
    let dir = setup();
    let out = cli(dir.path(), &["fit", "--model", "gmm", "--k", "0", "--data", "d.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(cli(dir.path(), &["fit", "--model", "nope", "--data", "d.csv"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["eval", "--model", "m.json", "--data", "d.csv", "--bogus"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = setup();
    let p = dir.path();
    fs::write(p.join("bad.csv"), "# pose-csv v1\na,b\n1.0,zz\n").unwrap();
    let out = cli(p, &["fit", "--model", "mvn", "--data", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    assert_eq!(cli(p, &["fit", "--model", "mvn", "--data", "missing.csv"]).status.code(), Some(2));
    fs::write(p.join("m.json"), "{\"format\": \"something else\"}").unwrap();
    assert_eq!(cli(p, &["eval", "--model", "m.json", "--data", "d.csv"]).status.code(), Some(2));
}

#[test]
fn grad_check_reports() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["fit", "--model", "mvn", "--data", "d.csv", "--out", "mvn.json"]);
    let r = json(&ok(p, &["grad-check", "--model", "mvn.json", "--count", "50", "--seed", "1"]));
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-5);

    ok(p, &["fit", "--model", "box", "--data", "d.csv", "--out", "box.json"]);
    let r = json(&ok(p, &["grad-check", "--model", "box.json", "--count", "50"]));
    assert_eq!(r["max_rel_error"].as_f64().unwrap(), 0.0);

    ok(p, &["train-vae", "--data", "d.csv", "--epochs", "3", "--batch", "40", "--hidden", "8", "--latent", "2", "--out", "vae.json"]);
    let r = json(&ok(p, &["grad-check", "--model", "vae.json", "--count", "30"]));
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(r["step"].as_f64().unwrap(), 1e-4);

    // a deliberately coarse step fails the check
    ok(p, &["fit", "--model", "gmm", "--k", "2", "--data", "d.csv", "--out", "gmm.json"]);
    let out = cli(p, &["grad-check", "--model", "gmm.json", "--count", "10", "--step", "5"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn train_vae_writes_trace_and_metadata() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["train-vae", "--data", "d.csv", "--epochs", "4", "--batch", "50", "--hidden", "8", "--latent", "2", "--out", "v.json", "--trace", "t.csv"]);
    let trace = fs::read_to_string(p.join("t.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,l_kl,l_rec,l_orth,l_det1,l_reg,l_total");
    assert_eq!(lines.len(), 5);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("v.json")).unwrap()).unwrap();
    assert_eq!(model["model_type"], "vae");
    assert_eq!(model["fit_metadata"]["training"]["epochs"], 4);
    assert_eq!(model["fit_metadata"]["training"]["optimizer"], "adam");
    assert_eq!(model["params"]["latent_dim"], 2);
}

#[test]
fn analyze_report() {
    let dir = setup();
    let p = dir.path();
    let r = json(&ok(p, &["analyze", "--data", "d.csv", "--dims", "0,1,2", "--bins", "10", "--hist", "h.csv", "--feasible-lo", "-0.5", "--feasible-hi", "0.5"]));
    assert_eq!(r["dims"], serde_json::json!([0, 1, 2]));
    assert_eq!(r["samples_used"], 400);
    let counts: u64 = r["histogram"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 400);
    let mass = r["infeasible_mass"].as_f64().unwrap();
    assert!(mass > 0.0 && mass < 1.0);
    assert!(fs::read_to_string(p.join("h.csv")).unwrap().starts_with("bin_lo,bin_hi,count\n"));
    let sub = json(&ok(p, &["analyze", "--data", "d.csv", "--samples", "100", "--seed", "3"]));
    assert_eq!(sub["samples_used"], 100);
}

#[test]
fn recover_command() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["fit", "--model", "mvn", "--data", "d.csv", "--out", "m.json"]);
    fs::write(p.join("obs.json"), r#"{"values": [0.3, -0.9, 0.0, 0.5, 0.1, 0.2], "noise_sigma": 0.3}"#).unwrap();
    let zero = json(&ok(p, &["recover", "--model", "m.json", "--obs", "obs.json", "--lambda", "0"]));
    assert_eq!(zero["estimate"], serde_json::json!([0.3, -0.9, 0.0, 0.5, 0.1, 0.2]));
    assert_eq!(zero["iterations_used"], 1);
    let reg = json(&ok(p, &["recover", "--model", "m.json", "--obs", "obs.json", "--lambda", "1"]));
    assert_eq!(reg["converged"], true);
    let trace: Vec<f64> = reg["objective_trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}
