use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn saa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saa")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    saa(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn uniform(lo: f64) -> Value {
    json!({"family": "uniform_box", "lower": [lo], "upper": [lo + 1.0]})
}

/// `g(x, ξ) = ξ - x` over a grid of `x` in [0, 1], samples drifting up at `rate` per step.
fn simulate_config(n: usize, rate: f64, budget_rate: f64, trials: usize) -> Value {
    let points: Vec<Value> = (0..=20).map(|i| json!([i as f64 / 20.0])).collect();
    let specs: Vec<Value> = (1..=n + 1).map(|i| uniform(-((n + 1 - i) as f64) * rate)).collect();
    let instance = json!({
        "decision_set": {"kind": "finite", "points": points},
        "constraint": {"kind": "bi_affine", "coupling": "none", "x_coef": [-1.0], "u_coef": [1.0]},
        "objective": [1.0],
        "risk": {"epsilon": 0.2, "alpha": 0.1}
    });
    json!({
        "experiments": [{
            "label": "drift",
            "config": {
                "instance": instance,
                "sequence": {"specs": specs, "budget": {"form": "linear", "rate": budget_rate}},
                "radii": {"rule": "theta", "theta": 0.05},
                "trials": trials,
                "master_seed": 3
            }
        }],
        "confidence": [{
            "card_x": 4, "delta": 0.2, "epsilon": 0.2, "alpha": 0.1, "theta": 0.05,
            "trials": 300, "master_seed": 5,
            "environment": {"kind": "adversarial_drift", "rate": 1e-4}
        }]
    })
}

#[test]
fn sample_size_prints_reference_values() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (json!({"card_x": 100, "delta": 0.05, "epsilon": 0.1, "alpha": 0.05, "theta": 0.02}), "4223"),
        (json!({"card_x": 20, "delta": 0.1, "epsilon": 0.15, "alpha": 0.05, "theta": 0.02}), "414"),
        (json!({"card_x": 1, "delta": (-1f64).exp(), "epsilon": 0.2, "alpha": 0.05, "theta": 0.05}), "50"),
    ];
    for (i, (config, expected)) in cases.iter().enumerate() {
        let path = write_config(dir.path(), &format!("ss{i}.json"), config);
        let o = run("sample-size", &path, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), *expected);
    }
}

#[test]
fn sample_size_rejects_bad_parameters() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        dir.path(),
        "ss.json",
        &json!({"card_x": 10, "delta": 0.05, "epsilon": 0.1, "alpha": 0.05, "theta": 0.5}),
    );
    let o = run("sample-size", &path, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("theta"), "{}", stderr(&o));
}

#[test]
fn missing_beta_names_the_field() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        dir.path(),
        "b.json",
        &json!({"bounds": [{"bound": "baseline", "N": 100, "epsilon": 0.1, "alpha": 0.05,
            "gamma": 0.01, "lipschitz": 1.0, "diameter": 1.0, "dim": 2}]}),
    );
    let out = dir.path().join("out");
    let o = run("bounds", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("beta"), "{err}");
    assert!(err.contains("bounds[0]"), "{err}");
    assert!(!out.join("bounds.csv").exists());
}

#[test]
fn empty_bounds_config_is_rejected() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "b.json", &json!({"bounds": []}));
    let o = run("bounds", &path, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no bounds requested"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_and_versions_are_rejected() {
    let dir = TempDir::new().unwrap();
    let typo = write_config(
        dir.path(),
        "typo.json",
        &json!({"bounds": [{"bound": "finite", "N": 10, "epsilon": 0.1, "alpha": 0.05, "card_x": 4, "cardx": 4}]}),
    );
    let o = run("bounds", &typo, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cardx"), "{}", stderr(&o));

    let version = write_config(dir.path(), "v.json", &json!({"version": 99, "dim": 2, "epsilon": 0.1,
        "alpha": 0.05, "ratio": 10.0, "n_max": 10}));
    let o = run("sweep", &version, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = run("bounds", &dir.path().join("absent.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn bounds_writes_csv_rows_for_ranges() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        dir.path(),
        "b.json",
        &json!({"bounds": [
            {"bound": "finite", "N": {"from": 10, "to": 12}, "epsilon": 0.1, "alpha": 0.05, "card_x": 4},
            {"bound": "robust_finite", "N": 20, "epsilon": 0.1, "alpha": 0.05, "card_x": 4,
             "drift": {"budget": {"form": "linear", "rate": 1e-4}, "theta": 0.02}}
        ]}),
    );
    let out = dir.path().join("out");
    let o = run("bounds", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bound,N,parameters,raw,log10,clamped");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("finite,10,"));
    assert!(lines[4].starts_with("robust_finite,20,"));
    let resolved: Value = serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["bounds"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_reports_first_crossing() {
    let dir = TempDir::new().unwrap();
    let path = write_config(
        dir.path(),
        "s.json",
        &json!({"dim": 2, "epsilon": 0.1, "alpha": 0.05, "ratio": 100.0, "n_max": 600}),
    );
    let out = dir.path().join("out");
    let o = run("sweep", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("first below 1 at N = 414"), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("figure1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "N,covering,covering_log10,baseline,baseline_log10,ratio");
    assert_eq!(csv.lines().count(), 601);
}

#[test]
fn simulate_is_reproducible_across_jobs() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "sim.json", &simulate_config(40, 1e-4, 1e-4, 400));
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = run("simulate", &path, &out, &["--jobs", jobs]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let est = fs::read(out.join("estimates.csv")).unwrap();
        let conf = fs::read(out.join("confidence.csv")).unwrap();
        let resolved = fs::read(out.join("resolved_config.json")).unwrap();
        outputs.push((est, conf, resolved));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seed_override_changes_the_stream() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "sim.json", &simulate_config(10, 1e-4, 1e-4, 400));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run("simulate", &path, &a, &["--seed", "1"]).status.code(), Some(0));
    assert_eq!(run("simulate", &path, &b, &["--seed", "2"]).status.code(), Some(0));
    let ra: Value = serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(ra["experiments"][0]["config"]["master_seed"], 1);
    assert_eq!(ra["confidence"][0]["master_seed"], 1);
    assert_ne!(fs::read(a.join("estimates.csv")).unwrap(), fs::read(b.join("estimates.csv")).unwrap());
}

#[test]
fn drift_beyond_budget_fails_before_any_trial() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "sim.json", &simulate_config(40, 2e-4, 1e-4, 400));
    let out = dir.path().join("out");
    let o = run("simulate", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
    assert!(!out.join("estimates.csv").exists());
}

#[test]
fn underdeclared_lipschitz_exits_with_code_two() {
    // eight independent bad points, each with violation 0.21, but a covering factor near 1
    let dir = TempDir::new().unwrap();
    let n = 20;
    let points: Vec<Value> = (0..8)
        .map(|k| Value::from((0..8).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>()))
        .collect();
    let target = json!({"family": "gaussian_isotropic", "mean": vec![0.0; 8], "std_dev": 1.0});
    let config = json!({"experiments": [{
        "label": "misdeclared",
        "config": {
            "instance": {
                "decision_set": {"kind": "finite", "points": points},
                "constraint": {"kind": "bi_affine", "coupling": "identity", "constant": -0.8064},
                "risk": {"epsilon": 0.2, "alpha": 0.1, "gamma": 1e-3, "lipschitz": 1e-6}
            },
            "sequence": {"specs": vec![target; n + 1], "budget": {"form": "linear", "rate": 0.0}},
            "trials": 400,
            "master_seed": 9
        }
    }]});
    let path = write_config(dir.path(), "sim.json", &config);
    let out = dir.path().join("out");
    let o = run("simulate", &path, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("misdeclared"));
    let csv = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",false"), "{csv}");
}

#[test]
fn usage_errors_exit_with_code_one() {
    assert_eq!(saa(&["bounds"]).status.code(), Some(1));
    assert_eq!(saa(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(saa(&["--help"]).status.code(), Some(0));
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn example_configs_run() {
    let dir = TempDir::new().unwrap();
    for (sub, name) in [
        ("bounds", "bounds.json"),
        ("sweep", "sweep.json"),
        ("sample-size", "sample_size.json"),
        ("simulate", "simulate.json"),
    ] {
        let o = run(sub, &example(name), &dir.path().join(name), &["--jobs", "2"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn figure_config_writes_full_sweep() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run("bounds", &example("figure1.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("figure1.csv")).unwrap();
    let ns: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ns, (1..=2000).collect::<Vec<_>>());
    assert!(!out.join("bounds.csv").exists());
}

#[test]
fn single_point_frequency_matches_binomial_cdf() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run("simulate", &example("single_point.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // v = P{ξ > 0.75} = 1/4, N = 20, αN = 2
    let q: f64 = 0.25;
    let exact: f64 = (0..=2u32)
        .map(|i| {
            let c = (0..i).fold(1.0, |c, j| c * (20 - j) as f64 / (j + 1) as f64);
            c * q.powi(i as i32) * (1.0 - q).powi(20 - i as i32)
        })
        .sum();
    let csv = fs::read_to_string(out.join("estimates.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let frequency: f64 = row[4].parse().unwrap();
    let half_width: f64 = row[7].parse().unwrap();
    assert!((frequency - exact).abs() <= 4.0 * half_width, "{frequency} vs {exact} (hw {half_width})");
}
