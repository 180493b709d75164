use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn itercomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itercomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn density_writes_csv_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = itercomp(&[
        "density",
        "--t",
        "1",
        "--grid",
        "-4:4:81",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("density.csv")).unwrap();
    assert_eq!(csv.lines().count(), 82);
    assert!(csv.starts_with("x0,value"));

    let summary = json(&out.join("density.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["manifest"], "manifest.json");
    let mass = summary["body"]["mass"].as_f64().unwrap();
    assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "density");
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for rec in outputs {
        let bytes = std::fs::read(out.join(rec["path"].as_str().unwrap())).unwrap();
        assert_eq!(rec["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }
}

#[test]
fn density_output_is_byte_identical_across_runs_and_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = itercomp(&[
            "--workers",
            workers,
            "density",
            "--outer",
            "cauchy",
            "--inner",
            "brownian",
            "--derivs",
            "d1,dt",
            "--grid",
            "-3:3:31",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("density.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn closed_form_column_agrees_off_the_removable_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cc");
    let o = itercomp(&[
        "density",
        "--outer",
        "cauchy",
        "--inner",
        "cauchy",
        "--closed-form",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body = &json(&out.join("density.json"))["body"];
    assert!(body["closed_form_max_abs_diff"].as_f64().unwrap() <= 1e-6);
    assert!(body["columns"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c == "closed_form"));

    let o = itercomp(&[
        "density",
        "--outer",
        "brownian",
        "--closed-form",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["density", "--outer", "levy", "--out", out],
        vec!["density", "--outer", "fbm:1.5", "--out", out],
        vec!["density", "--grid", "1:0:5", "--out", out],
        vec!["density", "--no-such-flag"],
        vec![
            "simulate",
            "--inner",
            "product:3",
            "--n",
            "10",
            "--out",
            out,
        ],
        vec!["verify", "E99", "--out", out],
        vec!["verify", "E1", "--grid", "-3:3:31", "--out", out],
    ] {
        let o = itercomp(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn numerical_failure_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = itercomp(&[
        "--max-evals",
        "42",
        "--rel-tol",
        "1e-15",
        "--abs-tol",
        "1e-300",
        "density",
        "--inner",
        "iterated:2",
        "--derivs",
        "d6",
        "--grid",
        "0.3:2:5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn verify_writes_one_report_per_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = itercomp(&["verify", "E13", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let reports: Vec<_> = std::fs::read_dir(out.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(reports.len(), 3, "{reports:?}");
    for r in &reports {
        let doc = json(r);
        assert_eq!(doc["schema_version"], 1);
        assert!(doc["body"]["max_rel_residual"].as_f64().unwrap() <= 1e-5);
    }
    assert!(out.join("summary.json").exists());
    assert_eq!(stdout(&o).matches("PASS").count(), 3);
}

#[test]
fn perturbed_verification_fails_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = itercomp(&[
        "verify",
        "E2",
        "--t",
        "1",
        "--perturb",
        "1.1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn verify_identity_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("i");
    let o = itercomp(&["verify", "I2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(out.join("reports").join("I2.json").exists());
}

#[test]
fn simulate_with_ks_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = itercomp(&[
            "--workers",
            workers,
            "simulate",
            "--outer",
            "brownian",
            "--inner",
            "cauchy",
            "--n",
            "20000",
            "--seed",
            "7",
            "--ks",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("PASS"));
        std::fs::read(out.join("samples.csv")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 20001);
    let side = json(&dir.path().join("a").join("samples.json"));
    assert_eq!(side["body"]["sidecar"]["seed"], 7);
}

#[test]
fn heavy_tailed_simulation_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = itercomp(&[
        "simulate",
        "--outer",
        "cauchy",
        "--inner",
        "cauchy",
        "--n",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stderr(&o).to_lowercase().contains("heavy"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "workers = 2\n[quadrature]\nrel_tol = 1e-9\n[density]\ngrid = \"-2:2:9\"\nt = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("d");
    let o = itercomp(&[
        "--config",
        cfg.to_str().unwrap(),
        "density",
        "--t",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body = &json(&out.join("density.json"))["body"];
    assert_eq!(body["rows"], 9);
    assert_eq!(body["t"], 2.0);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["rel_tol"], 1e-9);

    std::fs::write(&cfg, "[density]\nbogus = 1\n").unwrap();
    let o = itercomp(&["--config", cfg.to_str().unwrap(), "density"]);
    assert_eq!(code(&o), 2);
}
