//! End-to-end checks of the `ergodic-mlmc` binary: artifact schemas, golden
//! output for a fixed-seed smoke run, config validation and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ergodic-mlmc")
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}"))
}

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{name}"))
}

fn run_ok(args: &[&str]) -> String {
    let output = Command::new(bin())
        .args(args)
        .env_remove("ERGODIC_MLMC_WORKERS")
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn run_code(args: &[&str], envs: &[(&str, &str)]) -> (i32, String) {
    let mut cmd = Command::new(bin());
    cmd.args(args).env_remove("ERGODIC_MLMC_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let output = cmd.output().unwrap();
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

#[test]
fn rates_smoke_matches_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    run_ok(&[
        "rates",
        "--config",
        config_path("smoke.toml").to_str().unwrap(),
        "--out",
        &out,
    ]);
    for name in ["levels.csv", "rates.json"] {
        let got = std::fs::read(dir.path().join(name)).unwrap();
        let want = std::fs::read(golden_path(name))
            .unwrap_or_else(|_| panic!("golden file {name} missing"));
        assert_eq!(got, want, "{name} diverges from the golden output");
    }
}

#[test]
fn level_table_schema_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    run_ok(&[
        "rates",
        "--config",
        config_path("smoke.toml").to_str().unwrap(),
        "--out",
        &out,
        "--trace",
    ]);
    let text = std::fs::read_to_string(dir.path().join("levels.csv")).unwrap();
    let mut lines = text.split("\r\n");
    assert_eq!(
        lines.next().unwrap(),
        "level,h,t,n_samples,mean,variance,cost,kurtosis"
    );
    // 4 levels in the smoke config plus the trailing empty split.
    assert_eq!(text.split("\r\n").count(), 6);
    for row in text.split("\r\n").skip(1).filter(|r| !r.is_empty()) {
        assert_eq!(row.split(',').count(), 8);
        for field in row.split(',') {
            field.parse::<f64>().unwrap();
        }
    }
    // Traces exist for the coupled levels and carry the documented header.
    for level in 1..=3 {
        let trace = std::fs::read_to_string(dir.path().join(format!("trace_l{level}.csv"))).unwrap();
        assert!(trace.starts_with("step,t,fine_0,coarse_0,sq_distance\r\n"));
    }
    let rates: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rates.json")).unwrap())
            .unwrap();
    for key in ["seed", "samples_per_level", "alpha_hat", "beta_hat", "r2", "levels_used"] {
        assert!(rates.get(key).is_some(), "rates.json missing {key}");
    }
}

#[test]
fn estimate_emits_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_owned();
    run_ok(&[
        "estimate",
        "--config",
        config_path("smoke.toml").to_str().unwrap(),
        "--eps",
        "0.3,0.2",
        "--out",
        &out,
    ]);
    let text = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    let rows: Vec<&str> = text.split("\r\n").filter(|r| !r.is_empty()).collect();
    assert_eq!(rows[0], "eps,value,cost,cost_eps2");
    assert_eq!(rows.len(), 3);
    let first: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.3);
    assert!((first[1] - 2.5).abs() < 1.0);
    assert!((first[3] - first[2] * 0.3 * 0.3).abs() <= 1e-12 * first[2]);
    for k in 0..2 {
        let summary: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("summary_eps{k}.json"))).unwrap(),
        )
        .unwrap();
        for key in ["eps", "value", "bias_estimate", "total_cost", "alpha_hat", "beta_hat"] {
            assert!(summary.get(key).is_some(), "summary missing {key}");
        }
        assert!(dir.path().join(format!("levels_eps{k}.csv")).exists());
    }
}

#[test]
fn unbiased_rejects_ratio_outside_valid_range() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        r#"
seed = 1
h0 = 0.5
[model]
kind = "ou"
kappa = 0.4
[scheme]
kind = "euler"
[schedule]
kind = "theoretical_rho"
rho = 2.0
[unbiased]
ratio = 0.6
replicas = 10
variance_rate = 2.0
"#,
    )
    .unwrap();
    let (code, stderr) = run_code(
        &["unbiased", "--config", config.to_str().unwrap()],
        &[],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    // The refusal message cites the valid r-range.
    assert!(stderr.contains("2^(-beta)"), "stderr: {stderr}");
}

#[test]
fn unbiased_smoke_run_reports_interval_and_costs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ub.toml");
    std::fs::write(
        &config,
        r#"
seed = 5
h0 = 0.5
[model]
kind = "ou"
kappa = 0.4
[scheme]
kind = "euler"
[schedule]
kind = "theoretical_rho"
rho = 2.0
[unbiased]
ratio = 0.35355339059327373
replicas = 20000
variance_rate = 2.0
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "unbiased",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("unbiased.json")).unwrap()).unwrap();
    let mean = doc["mean"].as_f64().unwrap();
    let lo = doc["ci_4se"][0].as_f64().unwrap();
    let hi = doc["ci_4se"][1].as_f64().unwrap();
    assert!(lo < mean && mean < hi);
    assert!(lo <= 2.5 && 2.5 <= hi, "interval [{lo}, {hi}]");
    // Measured mean replica cost agrees with Σ c_j r^j within a factor 2.
    let measured = doc["mean_cost_per_replica"].as_f64().unwrap();
    let expected = doc["expected_cost_from_levels"].as_f64().unwrap();
    assert!(measured <= 2.0 * expected && measured >= 0.5 * expected);
    assert!(out.join("unbiased_levels.csv").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    // Unknown key.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("unknown.toml");
    std::fs::write(
        &bad,
        "seed = 1\nh0 = 0.5\nbogus = 3\n[model]\nkind = \"ou\"\nkappa = 0.4\n[scheme]\nkind = \"euler\"\n[schedule]\nkind = \"theoretical_rho\"\nrho = 2.0\n",
    )
    .unwrap();
    let (code, _) = run_code(&["rates", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(code, 2);

    // Missing file.
    let (code, _) = run_code(&["rates", "--config", "/nonexistent/x.toml"], &[]);
    assert_eq!(code, 2);

    // Estimate without an eps list.
    let no_eps = dir.path().join("no_eps.toml");
    std::fs::write(
        &no_eps,
        "seed = 1\nh0 = 0.5\n[model]\nkind = \"ou\"\nkappa = 0.4\n[scheme]\nkind = \"euler\"\n[schedule]\nkind = \"theoretical_rho\"\nrho = 2.0\n",
    )
    .unwrap();
    let (code, stderr) = run_code(&["estimate", "--config", no_eps.to_str().unwrap()], &[]);
    assert_eq!(code, 2, "stderr: {stderr}");

    // Bad worker env var.
    let (code, stderr) = run_code(
        &["rates", "--config", config_path("smoke.toml").to_str().unwrap()],
        &[("ERGODIC_MLMC_WORKERS", "zebra")],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn logreg_smoke_produces_fixture_map_traces_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("logreg_smoke.toml");
    std::fs::write(
        &config,
        r#"
seed = 9
h0 = 0.02
eps = [0.3]
[model]
kind = "logreg"
fixture_seed = 1
n_data = 40
dim = 3
[scheme]
kind = "sgld"
batch_size = 10
coupling = "union"
[schedule]
kind = "linear"
a = 3.0
b = 3.0
[estimator]
warmup_samples = 100
[trace]
level = 1
replicas = 20
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "logreg",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trace",
    ]);
    // MAP report: gradient norm at the reported mode is tiny.
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("map.json")).unwrap()).unwrap();
    assert!(map["grad_norm"].as_f64().unwrap() <= 1e-8);
    assert_eq!(map["x_map"].as_array().unwrap().len(), 3);

    // Fixture round-trips through the emitted JSON.
    let fixture_text = std::fs::read_to_string(out.join("fixture.json")).unwrap();
    let fixture = ergodic_mlmc::model::LogRegFixture::from_json(&fixture_text).unwrap();
    assert_eq!(fixture.n_data, 40);
    assert_eq!(fixture.labels.len(), 40);

    // Tables and traces.
    for name in ["estimates.csv", "cpu_time.csv", "levels_eps0.csv", "summary_eps0.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let trace = std::fs::read_to_string(out.join("coupling_trace.csv")).unwrap();
    assert!(trace.starts_with("step,t,mean_sq_distance\r\n"));
    // The averaged coupled-phase distance decays from start to finish.
    let rows: Vec<&str> = trace.split("\r\n").filter(|r| !r.is_empty()).collect();
    let first: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    let last: Vec<f64> = rows[rows.len() - 1]
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(last[2] <= first[2]);
    assert!(out.join("trace_l1_r0.csv").exists());
}

#[test]
fn same_seed_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        run_ok(&[
            "rates",
            "--config",
            config_path("smoke.toml").to_str().unwrap(),
            "--seed",
            "123",
            "--out",
            out.to_str().unwrap(),
        ]);
        runs.push(std::fs::read(out.join("levels.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn fixture_reload_reproduces_the_model() {
    // Generating via seed and reloading the emitted fixture give the same MAP.
    let dir = tempfile::tempdir().unwrap();
    let fixture = ergodic_mlmc::model::generate_logreg_fixture(1, 30, 3);
    let path = dir.path().join("fx.json");
    fixture.save(&path).unwrap();
    let reloaded = ergodic_mlmc::model::LogRegFixture::load(&path).unwrap();
    assert_eq!(fixture, reloaded);
}
