use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use manifactor::data::{write_csv, LabeledDataset};
use manifactor::report::RunReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manifactor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two tight blobs at (0.2, 0.8) and (0.8, 0.2).
fn blobs(n_per: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((2, 2 * n_per));
    for j in 0..2 * n_per {
        let centre = if j < n_per { [0.2, 0.8] } else { [0.8, 0.2] };
        for r in 0..2 {
            let noise: f64 = rng.sample(StandardNormal);
            x[[r, j]] = centre[r] + 0.03 * noise;
        }
    }
    let labels = (0..2 * n_per).map(|j| j / n_per).collect();
    LabeledDataset::new(x, Some(labels))
}

fn blobs_csv(dir: &Path) -> PathBuf {
    let path = dir.join("blobs.csv");
    write_csv(&blobs(30, 1), &path).unwrap();
    path
}

#[test]
fn gen_moons_shapes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let ten = dir.path().join("ten.csv");
    assert!(run(&["gen-moons", "--out", p(&a)]).status.success());
    assert!(run(&["gen-moons", "--out", p(&b)]).status.success());
    assert!(run(&["gen-moons", "--dim", "10", "--out", p(&ten)])
        .status
        .success());

    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 501);
    assert_eq!(lines[0], "x0,x1,label");
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    let text = std::fs::read_to_string(&ten).unwrap();
    assert_eq!(text.lines().count(), 501);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 11);
}

#[test]
fn bad_flags_exit_2() {
    let out = run(&["gen-moons", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_nmf_on_blobs_reports_perfect_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let report = dir.path().join("r.json");
    let metrics = dir.path().join("m.csv");
    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--preprocess",
        "minmax",
        "--algorithm",
        "nmf",
        "--out",
        p(&report),
        "--csv",
        p(&metrics),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = RunReport::read_json(&report).unwrap();
    assert_eq!(r.acc, Some(1.0));
    assert_eq!(r.dataset.n, 60);
    assert_eq!(r.dataset.c, Some(2));
    assert_eq!(r.objective_trace.len(), r.iterations);
    let rows = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.lines().nth(1).unwrap().starts_with("nmf,"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "algorithm=rmnmf\nmax_iter=40\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--set",
        "lambda=0.5",
        "--seed",
        "9",
        "--out",
        p(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = RunReport::read_json(&report).unwrap();
    assert_eq!(r.config.algorithm.as_str(), "rmnmf");
    assert_eq!(r.config.lambda, 0.5);
    assert_eq!(r.config.seed, 9);
    assert!(r.iterations <= 40);

    std::fs::write(&cfg, "no_such_key=1\n").unwrap();
    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_reports_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let report = dir.path().join("r.json");
    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--algorithm",
        "smrmf",
        "--set",
        "max_iter=15",
        "--grid=0.01,1",
        "--out",
        p(&report),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = RunReport::read_json(&report).unwrap();
    let cells = r.grid.unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(r.grid_criterion.as_deref(), Some("best_acc"));
    let best = cells.iter().filter_map(|c| c.acc).fold(0.0, f64::max);
    assert_eq!(r.acc, Some(best));
}

#[test]
fn numeric_failure_exits_3_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let report = dir.path().join("r.json");
    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--algorithm",
        "rmnmf",
        "--set",
        "rho=1e10",
        "--set",
        "max_iter=50",
        "--out",
        p(&report),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = RunReport::read_json(&report).unwrap();
    assert!(r.error.unwrap().contains("update_multipliers"));
    assert!(!r.objective_trace.is_empty());
    assert_eq!(r.objective_trace.len(), r.iterations);
}

#[test]
fn diagnose_before_and_after() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let report = dir.path().join("r.json");
    let diag = dir.path().join("d.json");
    let triplets = dir.path().join("t.csv");

    let out = run(&["diagnose", "--data", p(&data), "--out", p(&diag)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(v["before"]["pct_bad_nn"], 0.0);
    assert!(v["before"]["sim_bad_nbh"].is_null());
    assert!(v["after"].is_null());

    let out = run(&[
        "run",
        "--data",
        p(&data),
        "--set",
        "max_iter=30",
        "--out",
        p(&report),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "diagnose",
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--out",
        p(&diag),
        "--triplets",
        p(&triplets),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(v["after"]["graph_source"], "learned_masked");
    let lines = std::fs::read_to_string(&triplets).unwrap();
    assert_eq!(lines.lines().next(), Some("i,j,value"));
    assert!(lines.lines().count() > 1);
}

#[test]
fn diagnose_unlabeled_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.csv");
    let mut ds = blobs(10, 2);
    ds.labels = None;
    write_csv(&ds, &data).unwrap();
    let out = run(&[
        "diagnose",
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("d.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_keeps_results_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs_csv(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        vec![
            "run".to_string(),
            "--data".into(),
            p(&data).into(),
            "--set".into(),
            "max_iter=20".into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    assert!(bin()
        .args(args(&a))
        .env("MANIFACTOR_THREADS", "1")
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(args(&b))
        .env("MANIFACTOR_THREADS", "3")
        .status()
        .unwrap()
        .success());
    let ra = RunReport::read_json(&a).unwrap();
    let rb = RunReport::read_json(&b).unwrap();
    assert_eq!(ra.objective_trace, rb.objective_trace);
    assert_eq!(ra.labels, rb.labels);
}
