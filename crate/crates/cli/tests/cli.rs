use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dssc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dssc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dssc")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Three 2-dimensional subspaces in R^8, 20 points each.
fn small_data(dir: &Path) {
    ok(&dssc(
        dir,
        &[
            "synth",
            "--num-subspaces", "3",
            "--subspace-dim", "2",
            "--ambient-dim", "8",
            "--points-per-subspace", "20",
            "--seed", "5",
            "--out", "x.csv",
            "--labels-out", "y.txt",
        ],
    ));
}

#[test]
fn cluster_writes_deterministic_run_directory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    let args = |out: &'static str| {
        vec!["cluster", "--data", "x.csv", "--labels", "y.txt", "--k", "3", "--eta2", "0.01", "--out", out]
    };
    let stdout = ok(&dssc(d, &args("a")));
    ok(&dssc(d, &args("b")));
    for f in ["affinity.csv", "labels.txt", "report.json", "config.toml", "manifest.json"] {
        let a = fs::read(d.join("a").join(f)).unwrap();
        let b = fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(report["metrics"]["acc"], 1.0);
    let labels = fs::read_to_string(d.join("a/labels.txt")).unwrap();
    assert_eq!(labels.lines().count(), 60);
}

#[test]
fn manifest_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    ok(&dssc(d, &["cluster", "--data", "x.csv", "--k", "3", "--eta2", "0.01", "--seed", "7", "--out", "a"]));
    ok(&dssc(d, &["cluster", "--config", "a/config.toml", "--out", "b"]));
    assert_eq!(
        fs::read(d.join("a/labels.txt")).unwrap(),
        fs::read(d.join("b/labels.txt")).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["support_seed"], 7);
    assert_eq!(manifest["spectral_seed"], 7);
}

#[test]
fn stages_compose_to_the_same_scores() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    ok(&dssc(d, &["selfexpr", "--data", "x.csv", "--eta1", "10", "--abs", "--out", "c.csv"]));
    ok(&dssc(d, &["project", "--cost", "c.csv", "--sparse", "--eta2", "0.01", "--out", "a.csv"]));
    ok(&dssc(d, &["spectral", "--affinity", "a.csv", "--k", "3", "--out", "pred.txt"]));
    let line = ok(&dssc(d, &["eval", "--pred", "pred.txt", "--truth", "y.txt", "--affinity", "a.csv"]));
    assert_eq!(line.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    for key in ["acc", "nmi", "spe", "nnz"] {
        assert!(v[key].is_number(), "missing {key} in {line}");
    }
    assert_eq!(v["acc"], 1.0);
}

#[test]
fn project_methods_emit_feasible_triplets() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("cost.csv"), "0,0.9,0.1\n0.8,0,0.3\n0.2,0.4,0\n").unwrap();
    for method in ["dual", "active-set", "altproj"] {
        let out = ok(&dssc(d, &["project", "--cost", "cost.csv", "--eta2", "0.5", "--method", method]));
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("# n=3"));
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 3];
        for l in lines {
            let f: Vec<&str> = l.split(',').collect();
            let (i, j, v): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
            assert!(v >= 0.0);
            rows[i] += v;
            cols[j] += v;
        }
        for s in rows.iter().chain(&cols) {
            assert!((s - 1.0).abs() <= 1e-4, "{method}: sum {s}");
        }
    }
}

#[test]
fn forbidden_diagonal_stays_empty() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("cost.csv"), "5,1,1\n1,5,1\n1,1,5\n").unwrap();
    let out = ok(&dssc(d, &["project", "--cost", "cost.csv", "--eta2", "0.1", "--forbid-diag"]));
    for l in out.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_ne!(f[0], f[1], "diagonal entry {l}");
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    // Validation.
    assert_eq!(dssc(d, &["cluster", "--data", "x.csv", "--k", "3", "--eta2", "-1"]).status.code(), Some(2));
    assert_eq!(dssc(d, &["cluster", "--data", "x.csv", "--k", "1"]).status.code(), Some(2));
    fs::write(d.join("bad.csv"), "1,2\n3\n").unwrap();
    assert_eq!(dssc(d, &["cluster", "--data", "bad.csv", "--k", "2"]).status.code(), Some(2));
    // I/O.
    assert_eq!(dssc(d, &["cluster", "--data", "missing.csv", "--k", "3"]).status.code(), Some(4));
    assert_eq!(dssc(d, &["eval", "--pred", "missing.txt", "--truth", "y.txt"]).status.code(), Some(4));
    // Non-convergence: the run directory is still written.
    let cfg_path = d.join("nc.toml");
    fs::write(&cfg_path, "[method]\nname = \"jdssc\"\nmax_iter = 3\n").unwrap();
    let nc = dssc(d, &["cluster", "--config", "nc.toml", "--data", "x.csv", "--k", "3", "--out", "nc3"]);
    assert_eq!(nc.status.code(), Some(3), "{}", String::from_utf8_lossy(&nc.stderr));
    assert!(d.join("nc3/affinity.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    fs::write(d.join("c.toml"), "[params]\neta4 = 1.0\n").unwrap();
    let out = dssc(d, &["cluster", "--config", "c.toml", "--data", "x.csv", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta4"));
}

#[test]
fn presets_are_listed_and_applied() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let names = ok(&dssc(d, &["cluster", "--list-presets"]));
    assert!(names.lines().any(|l| l == "yaleb-jdssc"));
    small_data(d);
    let out = ok(&dssc(d, &["cluster", "--preset", "umist-adssc", "--data", "x.csv", "--k", "3", "--out", "p"]));
    assert!(out.contains("\"method\":\"adssc\""));
    let cfg = fs::read_to_string(d.join("p/config.toml")).unwrap();
    assert!(cfg.contains("eta1 = 0.5") && cfg.contains("eta2 = 0.05"), "{cfg}");
}

#[test]
fn synth_writes_bin_that_cluster_reads() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(&dssc(d, &["synth", "--points-per-subspace", "6", "--out", "x.bin"]));
    let bytes = fs::read(d.join("x.bin")).unwrap();
    assert_eq!(&bytes[..4], b"DSSC");
    assert_eq!(bytes.len(), 16 + 8 * 60 * 15);
    ok(&dssc(d, &["cluster", "--data", "x.bin", "--k", "10", "--eta2", "0.05"]));
}

#[test]
fn tune_eta2_reaches_k_components() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    small_data(d);
    let out = ok(&dssc(d, &["cluster", "--data", "x.csv", "--labels", "y.txt", "--k", "3", "--eta2", "1e-4", "--tune-eta2", "--out", "t"]));
    let report: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(report["converged"].as_bool().unwrap());
    let cfg = fs::read_to_string(d.join("t/config.toml")).unwrap();
    assert!(!cfg.contains("eta2 = 0.0001\n"), "eta2 was not tuned:\n{cfg}");
}

#[test]
fn bench_emits_csv_and_ranking() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = dssc(d, &["bench", "--instances", "d3:40,d4:40", "--repeats", "1", "--warmup", "0"]);
    let csv = ok(&out);
    assert_eq!(csv.lines().next(), Some("instance,n,method,seconds,iterations,converged,max_deviation"));
    assert_eq!(csv.lines().count(), 7);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d3:40:") && err.contains(" < "), "{err}");
}
