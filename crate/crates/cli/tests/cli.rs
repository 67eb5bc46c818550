use std::path::Path;
use std::process::{Command, Output};

fn covadj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covadj")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn table_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("Model,")).collect()
}

/// Two strata, alternating arms, outcome linear in two covariates.
fn trial_csv(dir: &Path, balanced: bool) -> String {
    let mut s = String::from("y,a,stratum,x1,x2\n");
    let mut state = 12345u64;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    // Last control row of each stratum, reused by the next treated unit.
    let mut shared = [(0.0, 0.0); 2];
    for i in 0..200 {
        let a = (i / 2) % 2;
        let (x1, x2) = if balanced && a == 1 { shared[i % 2] } else { (4.0 * unif(), 4.0 * unif()) };
        shared[i % 2] = (x1, x2);
        let y = 3.0 * x1 - x2 + 2.0 * a as f64 + (i % 2) as f64 + unif();
        s.push_str(&format!("{y},{a},s{},{x1},{x2}\n", i % 2));
    }
    let path = dir.join(if balanced { "balanced.csv" } else { "trial.csv" });
    std::fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

fn field(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(key)).unwrap();
    line[key.len()..].trim().trim_end_matches('%').parse().unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--model", "1", "--n", "200", "--reps", "100", "--scheme", "sr", "--seed", "7", "--p", "20"];
    let a = covadj(&args);
    let b = covadj(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(table_rows(&stdout(&a)).len(), 5);
}

#[test]
fn infeasible_block_is_a_usage_error() {
    let o = covadj(&["simulate", "--model", "1", "--scheme", "sbr", "--block-size", "5", "--pi", "0.5", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("block size 5"));
}

#[test]
fn missing_data_file_names_the_path() {
    let o = covadj(&["analyze", "/no/such/trial.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/trial.csv"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nmodel = 1\nn = 120\nreps = 5\np = 10\nseed = 4\n").unwrap();
    let o = covadj(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# reps = 3"));
    assert!(text.contains("# n = 120"));

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = covadj(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_model_at_once() {
    let o = covadj(&["simulate", "--model", "all", "--n", "100", "--reps", "3", "--p", "10", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(table_rows(&text).len(), 15);
    for m in 1..=3 {
        assert!(text.contains(&format!("true_tau_model{m}")));
    }
}

#[test]
fn randomize_appends_one_column_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("units.csv");
    let mut s = String::from("sex,age\n");
    for i in 0..30 {
        s.push_str(&format!("{},{}\n", i % 2, i % 3));
    }
    std::fs::write(&data, s).unwrap();
    let out = dir.path().join("assigned.csv");
    let o = covadj(&[
        "randomize",
        data.to_str().unwrap(),
        "--scheme",
        "ps",
        "--margins",
        "sex,age",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sex,age,a");
    assert_eq!(lines.len(), 31);
    assert!(lines[1..].iter().all(|l| l.ends_with(",0") || l.ends_with(",1")));
}

#[test]
fn expand_emits_the_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("x.csv");
    std::fs::write(&data, "id,x,z,d\n1,0.5,1,0\n2,1.5,-1,1\n3,0.1,2,0\n4,2.0,0,1\n").unwrap();
    let o = covadj(&["expand", data.to_str().unwrap(), "--continuous", "x,z", "--binary", "d", "--cross"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    // id, then x, x^2, x^3, z, z^2, z^3, d and the products x*z, x*d, z*d.
    assert_eq!(header.len(), 11, "{header:?}");
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn analyze_without_covariates_reproduces_the_unadjusted_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let data = trial_csv(dir.path(), false);
    let base = stdout(&covadj(&["analyze", &data]));
    let ols = covadj(&["analyze", &data, "--estimator", "tau_ols", "--covariates", ""]);
    assert!(ols.status.success(), "{}", stderr(&ols));
    assert_eq!(field(&base, "estimate"), field(&stdout(&ols), "estimate"));
}

#[test]
fn analyze_reports_a_positive_reduction_for_predictive_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let data = trial_csv(dir.path(), false);
    for est in ["tau_ols", "tilde_tau_ols", "tau_lasso", "tilde_tau_lasso"] {
        let o = covadj(&["analyze", &data, "--estimator", est, "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(field(&stdout(&o), "variance reduction") > 50.0, "{est}");
    }
}

#[test]
fn analyze_balanced_data_leaves_the_estimate_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = trial_csv(dir.path(), true);
    let base = field(&stdout(&covadj(&["analyze", &data])), "estimate");
    for est in ["tau_ols", "tilde_tau_ols", "tau_lasso", "tilde_tau_lasso"] {
        let o = covadj(&["analyze", &data, "--estimator", est, "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!((field(&stdout(&o), "estimate") - base).abs() < 1e-5, "{est}");
    }
}

#[test]
fn json_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let data = trial_csv(dir.path(), false);
    let o = covadj(&["analyze", &data, "--estimator", "tau_lasso", "--seed", "2", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["estimate"].as_f64().unwrap().is_finite());
    let o = covadj(&["simulate", "--model", "1", "--n", "100", "--reps", "3", "--p", "5", "--seed", "1", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
}
