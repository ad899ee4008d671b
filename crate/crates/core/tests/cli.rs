use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tsb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    tsb(&args)
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn gaussian_bernstein_check_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.json", &json!({"command": "bernstein-check", "seed": 11}));
    let out = dir.path().join("out");
    let o = run_cmd("bernstein-check", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("bernstein.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], json!(true));
    assert!((report["n_d_sq"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(std::fs::read_to_string(out.join("bernstein.svg")).unwrap().starts_with("<svg"));
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["started_unix"].as_f64().unwrap() > 0.0);
    assert!(report.get("started_unix").is_none());
}

#[test]
fn lambda_outside_the_envelope_domain_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.json",
        &json!({"seed": 1, "kappa_gamma": 2.0, "lambda_grid": [0.25, 0.5], "replications": 10000}),
    );
    let o = run_cmd("bernstein-check", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn schema_violations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing_seed = write_config(dir.path(), "a.json", &json!({"experiment": "GaussianReg"}));
    let o = run_cmd("bernstein-check", &missing_seed, &dir.path().join("a"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"));

    let unknown = write_config(dir.path(), "b.json", &json!({"seed": 1, "lambdas": [0.5]}));
    assert_eq!(code(&run_cmd("bernstein-check", &unknown, &dir.path().join("b"), &[])), 2);

    let wrong_cmd = write_config(dir.path(), "c.json", &json!({"seed": 1, "command": "fit"}));
    assert_eq!(code(&run_cmd("bernstein-check", &wrong_cmd, &dir.path().join("c"), &[])), 2);

    assert_eq!(code(&tsb(&["no-such-command"])), 2);
    assert_eq!(code(&tsb(&["fit"])), 2);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn iso_demo_fit_is_monotone_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("iso_demo.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run_cmd("fit", &cfg, &a, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&run_cmd("fit", &cfg, &b, &[])), 0);

    let mut r = csv::Reader::from_path(a.join("fit.csv")).unwrap();
    let fit: Vec<f64> = r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(fit.len(), 60);
    assert!(fit.windows(2).all(|w| w[0] <= w[1]), "fit is not monotone");

    for f in ["chain.csv", "chain.jsonl", "fit.csv", "histogram.csv", "summary.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs between runs");
    }
    let h = String::from_utf8(read(&a.join("histogram.csv"))).unwrap();
    assert!(h.starts_with("model,count,frequency"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_config("iso_demo.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run_cmd("fit", &cfg, &a, &["--seed", "7"])), 0);
    assert_eq!(code(&run_cmd("fit", &cfg, &b, &["--seed", "8"])), 0);
    assert_ne!(read(&a.join("chain.csv")), read(&b.join("chain.csv")));
    let meta: Value = serde_json::from_slice(&read(&b.join("metadata.json"))).unwrap();
    assert_eq!(meta["seed"], json!(8));
}

#[test]
fn malformed_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "i,value\n0,0.1\n1,0.4\n2,abc\n3,0.9\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "f.json",
        &json!({"seed": 1, "prior": {"app": "Iso"}, "dataset": "d.csv",
                "sampler": {"n_iter": 200, "burn_in": 50}}),
    );
    let o = run_cmd("fit", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn sampler_initialization_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "value\n1\n0\n2\n3\n1\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "f.json",
        &json!({"seed": 1, "experiment": "PoissonReg", "dataset": "d.csv",
                "prior": {"app": "Iso", "m_max": [2], "level_grid": {"values": [100.0]}},
                "sampler": {"n_iter": 100, "burn_in": 10}}),
    );
    let o = run_cmd("fit", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

fn small_sweep(n_grid: Value, levels: Value, experiment: &str) -> Value {
    json!({
        "command": "rate-sweep",
        "experiment": experiment,
        "truth": {"kind": "step", "breaks": [0.5], "levels": levels},
        "prior": {"app": "Iso", "m_max": [10]},
        "sampler": {"n_iter": 600, "burn_in": 200, "thin": 2},
        "n_grid": n_grid,
        "replications": 20,
        "seed": 4
    })
}

#[test]
fn rate_sweep_grid_and_directory_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let short = write_config(
        dir.path(),
        "s.json",
        &small_sweep(json!([20, 40, 80]), json!([0.0, 2.0]), "GaussianReg"),
    );
    assert_eq!(code(&run_cmd("rate-sweep", &short, &dir.path().join("s"), &[])), 2);

    let ok = write_config(
        dir.path(),
        "ok.json",
        &small_sweep(json!([20, 40, 80, 160]), json!([0.0, 2.0]), "GaussianReg"),
    );
    let out = dir.path().join("sweep");
    let o = run_cmd("rate-sweep", &ok, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().filter(|l| l.starts_with("cell ")).count(), 80);
    let report: Value = serde_json::from_slice(&read(&out.join("report.json"))).unwrap();
    assert!(report["slope"].as_f64().unwrap() < 0.0);
    let first = read(&out.join("risk.csv"));

    let again = run_cmd("rate-sweep", &ok, &out, &[]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    let forced = run_cmd("rate-sweep", &ok, &out, &["--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(read(&out.join("risk.csv")), first);
}

#[test]
fn rate_sweep_fails_when_cells_keep_failing() {
    // Binary signals must lie in [eta, 1 - eta], so every attempt is rejected.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &small_sweep(json!([20, 40, 80, 160]), json!([0.5, 2.0]), "BinaryReg"),
    );
    let o = run_cmd("rate-sweep", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("after retries"));
}

#[test]
fn prior_check_and_oracle_compare_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = run_cmd("prior-check", &repo_config("prior_check_iso.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&read(&out.join("prior_check.json"))).unwrap();
    let total: f64 = report["weights"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let cfg = write_config(
        dir.path(),
        "o.json",
        &json!({"seed": 2, "truth": {"kind": "step", "breaks": [0.5], "levels": [0.0, 2.0]},
                "prior": {"app": "Iso", "m_max": [10]},
                "sampler": {"n_iter": 2000, "burn_in": 500}, "n_grid": [50, 100]}),
    );
    let out = dir.path().join("o");
    let o = run_cmd("oracle-compare", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Value = serde_json::from_slice(&read(&out.join("oracle.json"))).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[0]["m_star"], json!("(2)"));
}

#[test]
fn test_decay_command_passes_for_gaussian_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = run_cmd("test-decay", &repo_config("test_decay_gaussian.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("decay.svg").exists());
}
