use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kpo(args: &[&str], config: &str) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = run_in(&dir.path().join("out"), &cfg, args);
    (out, dir)
}

fn run_in(out_dir: &Path, cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpo"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out_dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn without_clock(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

const SMALL_STEADY: &str = "fock_dim = 14\n[grid]\ndelta_min = -3.0\ndelta_max = 3.0\ndelta_points = 7\n";

#[test]
fn steady_writes_csv_and_provenance() {
    let (out, dir) = kpo(&["steady"], SMALL_STEADY);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/steady.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,n_mean,x,p,phi"));
    assert_eq!(lines.count(), 7);
    let summary = json(dir.path().join("out/steady.json"));
    assert_eq!(summary["command"], "steady");
    assert_eq!(summary["config"]["fock_dim"], 14);
    assert_eq!(summary["convergence"]["refined_dim"], 19);
    assert!(summary["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(summary["files"], serde_json::json!(["steady.csv"]));
}

#[test]
fn identical_config_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL_STEADY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_in(&a, &cfg, &["steady"]).status.success());
    assert!(run_in(&b, &cfg, &["steady"]).status.success());
    assert_eq!(std::fs::read(a.join("steady.csv")).unwrap(), std::fs::read(b.join("steady.csv")).unwrap());
    assert_eq!(without_clock(json(a.join("steady.json"))), without_clock(json(b.join("steady.json"))));
}

#[test]
fn seeded_trajectories_reproduce_across_thread_counts() {
    let cfg = "fock_dim = 16\n[params]\nkappa = 1.0\n[sweep]\nsweep_time = 4.0\n[heterodyne]\ntrajectories = 2\nsamples = 50\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_in(&a, &path, &["trajectory", "--seed", "11", "--threads", "1"]);
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(run_in(&b, &path, &["trajectory", "--seed", "11", "--threads", "2"]).status.success());
    for name in ["trajectory_000.csv", "trajectory_001_smoothed.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert!(run_in(&c, &path, &["trajectory", "--seed", "12"]).status.success());
    assert_ne!(std::fs::read(a.join("trajectory_000.csv")).unwrap(), std::fs::read(c.join("trajectory_000.csv")).unwrap());
}

#[test]
fn empty_detuning_grid_is_a_config_error() {
    let (out, dir) = kpo(&["steady"], "fock_dim = 8\n[grid]\ndeltas = []\n");
    assert_eq!(out.status.code(), Some(2));
    let err = json(dir.path().join("out/error.json"));
    assert_eq!(err["kind"], "invalid_config");
    assert_eq!(err["exit_code"], 2);
    assert!(!dir.path().join("out/steady.csv").exists());
}

#[test]
fn malformed_configs_exit_with_code_2() {
    assert_eq!(kpo(&["steady"], "fock_dimm = 8\n").0.status.code(), Some(2));
    assert_eq!(kpo(&["steady"], "fock_dim = 0\n").0.status.code(), Some(2));
    assert_eq!(kpo(&["steady"], "[params]\ngamma = -1.0\n").0.status.code(), Some(2));
    // κ = 0 leaves nothing to measure.
    assert_eq!(kpo(&["trajectory"], "fock_dim = 8\n").0.status.code(), Some(2));
    assert_eq!(kpo(&["steady", "--fock-dim", "zero"], "").0.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_3() {
    let cfg = "fock_dim = 12\n[params]\nkappa = 1.0\n[sweep]\nsweep_time = 5.0\n[heterodyne]\ndt = 0.2\nsamples = 10\n";
    let (out, dir) = kpo(&["trajectory"], cfg);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(dir.path().join("out/error.json"))["exit_code"], 3);
}

#[test]
fn flags_override_the_file() {
    let (out, dir) = kpo(&["steady", "--fock-dim", "10", "--seed", "77"], SMALL_STEADY);
    assert!(out.status.success());
    let summary = json(dir.path().join("out/steady.json"));
    assert_eq!(summary["config"]["fock_dim"], 10);
    assert_eq!(summary["config"]["seed"], 77);
}

#[test]
fn linear_qfi_matches_closed_form_rowwise() {
    let cfg = "fock_dim = 16\n[params]\nu = 0.0\ng_abs = 0.0\neta = 0.0\nf = 1.0\ngamma = 2.0\n\
               [grid]\ndelta_min = -3.0\ndelta_max = 3.0\ndelta_points = 7\n";
    let (out, dir) = kpo(&["qfi"], cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/qfi.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,temperature,qfi,linear_qfi,flagged"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (qfi, exact): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!((qfi - exact).abs() / exact < 1e-4, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 7);
    let summary = json(dir.path().join("out/qfi.json"));
    assert!(summary["convergence"]["passed"].as_bool().unwrap());
}

#[test]
fn every_subcommand_reports_convergence() {
    let cfg = "fock_dim = 14\n[params]\nkappa = 1.0\n\
               [grid]\ndelta_min = 0.0\ndelta_max = 1.0\ndelta_points = 2\ntheta_points = 2\n\
               [sweep]\nsweep_time = 10.0\nsamples = 60\n\
               [protocol]\nshots = 2\nf_grid = [3.0, 4.0, 5.0]\ndeterministic = true\npdf = false\n\
               [husimi]\npoints = 41\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    for cmd in ["steady", "gap", "sweep", "husimi", "qfi", "calibrate", "transduce"] {
        let out_dir = dir.path().join(cmd);
        let out = run_in(&out_dir, &path, &[cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let summary = json(out_dir.join(format!("{cmd}.json")));
        assert!(summary["convergence"]["relative_change"].is_number(), "{cmd}");
        assert!(summary["convergence"]["observable"].is_string(), "{cmd}");
        for file in summary["files"].as_array().unwrap() {
            assert!(out_dir.join(file.as_str().unwrap()).exists(), "{cmd}: {file}");
        }
    }
}
