use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rmstcurve"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sample_csv(dir: &Path, name: &str, pairs: &[&str]) -> PathBuf {
    let mut args = vec!["simulate", "--sample"];
    args.extend_from_slice(pairs);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = dir.join(name);
    std::fs::write(&p, &o.stdout).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fit_writes_four_files() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s2.csv", &["scenario=2", "n=150", "seed=7"]);
    let out = dir.path().join("fit");
    let o = run(&["fit", "--input", data.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["summary.json", "curve.json", "plot.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let curve = read_json(&out.join("curve.json"));
    for key in ["grid", "estimate", "se", "ci", "band", "u95", "seed", "config", "software"] {
        assert!(curve.get(key).is_some(), "curve.json lacks {key}");
    }
    assert_eq!(curve["seed"], 3);
    assert!(curve["u95"].as_f64().unwrap() >= 1.9);
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["selected_df"].as_u64().is_some());
    assert!(summary["coefficients"].as_array().unwrap().iter().any(|c| c["term"] == "Z"));
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert!(plot.starts_with("t,estimate,se,ci_lo,ci_hi,band_lo,band_hi\n"));
    assert_eq!(plot.lines().count(), 31);
}

#[test]
fn same_input_and_seed_give_identical_json() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s3.csv", &["scenario=3", "n=100", "seed=1"]);
    let out = dir.path().join("o");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = run(&["fit", "--input", data.to_str().unwrap(), "--seed", "11", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let files: Vec<Vec<u8>> = ["summary.json", "curve.json", "plot.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        runs.push(files);
    }
    assert!(runs[0] == runs[1]);
}

#[test]
fn missing_status_column_is_named() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "time,arm\n1.0,0\n2.0,1\n").unwrap();
    let o = run(&["fit", "--input", p.to_str().unwrap(), "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("'status'"), "{}", stderr(&o));
}

#[test]
fn malformed_row_reports_line_number() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "time,status,arm\n1.0,1,0\n2.0,1,1\n3.0,2,1\n").unwrap();
    let o = run(&["pseudo", "--input", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn stochastic_commands_refuse_without_seed() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s.csv", &["scenario=2", "n=50", "seed=2"]);
    for cmd in ["fit", "band", "tute"] {
        let o = run(&[cmd, "--input", data.to_str().unwrap(), "--out", dir.path().join(cmd).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(stderr(&o).contains("seed"), "{cmd}: {}", stderr(&o));
    }
    let o = run(&["simulate", "scenario=2", "n=50", "reps=100"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s.csv", &["scenario=2", "n=120", "seed=4"]);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "grid=12\neval_points=15\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "fit", "--input", data.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap(),
        "--grid", "8", "--eval-points", "10", "--config", cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&out.join("summary.json"));
    assert_eq!(s["restriction_grid"].as_array().unwrap().len(), 12);
    assert_eq!(s["config"]["grid"], 12);
    assert_eq!(read_json(&out.join("curve.json"))["grid"].as_array().unwrap().len(), 15);
}

#[test]
fn band_command_writes_curve() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s.csv", &["scenario=3", "n=100", "seed=5"]);
    let out = dir.path().join("b");
    let o = run(&["band", "--input", data.to_str().unwrap(), "--seed", "2", "--out", out.to_str().unwrap(), "--df", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = read_json(&out.join("curve.json"));
    let est = c["estimate"].as_array().unwrap();
    let band = c["band"].as_array().unwrap();
    let ci = c["ci"].as_array().unwrap();
    for i in 0..est.len() {
        assert!(band[i][0].as_f64().unwrap() <= ci[i][0].as_f64().unwrap());
        assert!(band[i][1].as_f64().unwrap() >= ci[i][1].as_f64().unwrap());
    }
}

fn tute_json(dir: &Path, data: &Path) -> Value {
    let out = dir.join("t");
    let o = run(&[
        "tute", "--input", data.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap(),
        "--bootstrap", "200", "--draws", "20000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    read_json(&out.join("tute.json"))
}

#[test]
fn crossing_dataset_gives_finite_tute_and_two_intervals() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s2.csv", &["scenario=2", "n=200", "seed=7"]);
    let t = tute_json(dir.path(), &data);
    for key in ["band_inversion", "bootstrap"] {
        let point = t[key]["point"].as_f64().expect("finite point");
        assert!((20.0..45.0).contains(&point), "{key}: {point}");
        let ci = t[key]["ci"].as_array().unwrap();
        assert!(ci[0].as_f64().unwrap() <= point);
    }
    assert_eq!(t["band_inversion"]["method"], "model_band_inversion");
    assert!(t["bootstrap"]["frac_infinite"].as_f64().is_some());
}

#[test]
fn non_crossing_dataset_reports_infinite_tute() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("nc.csv");
    let mut text = String::from("time,status,arm\n");
    for k in 1..=80 {
        let t = k as f64 * 0.1;
        text.push_str(&format!("{t},1,0\n{},1,1\n", 2.0 * t));
    }
    std::fs::write(&p, text).unwrap();
    let t = tute_json(dir.path(), &p);
    for key in ["band_inversion", "bootstrap"] {
        assert_eq!(t[key]["point"], "inf", "{key}");
        assert_eq!(t[key]["ci"][1], "inf", "{key}");
        let w = t[key]["warnings"].as_array().unwrap();
        assert!(w.iter().any(|s| s == "no finite TUTE"), "{key}: {w:?}");
    }
    let w = t["bootstrap"]["warnings"].as_array().unwrap();
    assert!(w.iter().any(|s| s == "no evidence for finite TUTE"));
}

#[test]
fn late_crossing_triggers_clinical_warning() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s4.csv", &["scenario=4", "n=200", "seed=7"]);
    let t = tute_json(dir.path(), &data);
    let w = t["band_inversion"]["warnings"].as_array().unwrap();
    assert!(
        w.iter().any(|s| s.as_str().unwrap().contains("not interesting from a clinical viewpoint")),
        "{w:?}"
    );
}

#[test]
fn pseudo_writes_long_format() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s.csv", &["scenario=2", "n=30", "seed=3"]);
    let o = run(&["pseudo", "--input", data.to_str().unwrap(), "--grid", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("subject,tau,pseudo_value"));
    assert_eq!(lines.count(), 60 * 5);
}

#[test]
fn truth_reproduces_scenario_values() {
    let o = run(&["truth", "--scenario", "3"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["crossing"].as_f64().unwrap() - 8.09).abs() < 0.01);
    assert!((v["tute"].as_f64().unwrap() - 17.75).abs() < 0.05);
    let o = run(&["truth", "--scenario", "9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_table_layouts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "scenario=3", "n=40", "reps=100", "seed=7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert!(csv.starts_with("scenario,n_per_arm,reps,failures,"));
    let j = read_json(&out.join("study.json"));
    assert_eq!(j["seed"], 7);
    assert_eq!(j["report"]["layout"], "curve");

    let o = run(&["simulate", "cell=weibull", "delta=1", "beta=0", "p=0.75", "n=250", "reps=100", "seed=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("n,effect,delta,beta_b,p,tau,truth,pv_scalar_bias,pv_vector_bias"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn simulate_rejects_unknown_scenario() {
    let o = run(&["simulate", "scenario=8", "n=100", "reps=100", "seed=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown scenario"), "{}", stderr(&o));
}

#[test]
fn rank_deficient_covariates_exit_with_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let data = sample_csv(dir.path(), "s.csv", &["scenario=3", "n=60", "seed=3"]);
    let text = std::fs::read_to_string(&data).unwrap();
    let with_const: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l},one\n") } else { format!("{l},1\n") })
        .collect();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, with_const).unwrap();
    let o = run(&["fit", "--input", p.to_str().unwrap(), "--seed", "1", "--covariates", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
