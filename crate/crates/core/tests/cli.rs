//! End-to-end exercises of the installed binary: exit-status contract,
//! strict config handling, output files, and the config round-trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rdmini")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rdmini_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

/// Small pulse overrides shared by most tests.
fn small(dir: &Path) -> Vec<String> {
    vec![
        "--set".into(),
        "grid.nx1=24".into(),
        "--set".into(),
        "grid.nx2=16".into(),
        "--set".into(),
        "problem.center=[12.0,8.0]".into(),
        "--set".into(),
        "problem.nsteps=2".into(),
        "--output".into(),
        dir.display().to_string(),
    ]
}

fn run_small(cmd: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(small(dir));
    args.extend(extra.iter().map(|s| s.to_string()));
    let v: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run(&v)
}

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tmpdir("run");
    let out = run_small("run", &dir, &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("run_report.txt")).unwrap();
    assert!(report.contains("solves = 6"));
    assert!(report.contains("all_converged = true"));
    assert!(report.starts_with("# radiation pulse run report"));
    assert!(dir.join("final_field.bin").exists());
    assert!(dir.join("effective_config.toml").exists());
}

#[test]
fn zero_steps_run_succeeds_with_empty_stats() {
    let dir = tmpdir("zero");
    let out = run_small("run", &dir, &["--set", "problem.nsteps=0"]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.join("run_report.txt")).unwrap();
    assert!(report.contains("solves = 0"));
}

#[test]
fn forced_nonconvergence_exits_nonzero_and_reports_max_iter() {
    let dir = tmpdir("maxiter");
    let out = run_small("run", &dir, &["--set", "solver.tol=1e-30", "--set", "solver.max_iter=2"]);
    assert!(!out.status.success(), "must fail on non-convergence");
    let report = std::fs::read_to_string(dir.join("run_report.txt")).unwrap();
    assert!(report.contains("max_iter"), "report should carry the MaxIter outcome:\n{report}");
}

#[test]
fn config_parse_error_names_line() {
    let dir = tmpdir("parse");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[grid]\nnx1 = = 2\n").unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_fatal() {
    let dir = tmpdir("unknown");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[solver]\ntolerance = 1e-8\n").unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance"));
}

#[test]
fn bench_emits_csv_with_expected_rows() {
    let dir = tmpdir("bench");
    let out = run_small("bench", &dir, &["--set", "bench.reps=20", "--set", "bench.warmup=2"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("kernel_bench.csv")).unwrap();
    assert!(csv.starts_with("# config_hash: 0x"));
    // header + 5 kernels x 2 paths
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 11);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("ratio"));

    // Kernel subset shrinks the table.
    let dir2 = tmpdir("bench2");
    let out2 = run_small(
        "bench",
        &dir2,
        &["--set", "bench.reps=20", "--set", "bench.warmup=2", "--set", "bench.kernels=[\"dprod\"]"],
    );
    assert!(out2.status.success());
    let csv2 = std::fs::read_to_string(dir2.join("kernel_bench.csv")).unwrap();
    assert_eq!(csv2.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn bench_checksums_reproducible_for_fixed_seed() {
    let dir1 = tmpdir("seed1");
    let dir2 = tmpdir("seed2");
    for d in [&dir1, &dir2] {
        let out = run_small("bench", d, &["--set", "bench.reps=10", "--set", "bench.warmup=1"]);
        assert!(out.status.success());
    }
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("kernel_bench.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| {
                // keep kernel, path, checksum; drop the timing columns
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{}", f[0], f[1], f[4])
            })
            .collect()
    };
    assert_eq!(strip(&dir1), strip(&dir2));
}

#[test]
fn scale_produces_rows_and_rejects_bad_topologies() {
    let dir = tmpdir("scale");
    let out = run_small("scale", &dir, &["--topologies", "1x1,2x2,30x1"]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("scale_sweep.csv")).unwrap();
    assert!(csv.contains("# skipped 30x1"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3); // header + 2 rows

    let out = run_small("scale", &dir, &["--topologies", "0x4"]);
    assert_eq!(out.status.code(), Some(2), "0x4 must be a usage error");
}

#[test]
fn verify_passes_and_empty_selection_is_trivial() {
    let out = run(&["verify", "--checks", "operator-assembly,variant-equivalence"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let out = run(&["verify", "--checks", ""]);
    assert!(out.status.success());

    let out = run(&["verify", "--checks", "no-such-check"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn worker_cap_env_blocks_oversized_topologies() {
    let dir = tmpdir("cap");
    let mut args: Vec<String> = vec!["run".into()];
    args.extend(small(&dir));
    args.extend(["--set".into(), "topology.nprx1=2".into(), "--set".into(), "topology.nprx2=2".into()]);
    let v: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = Command::new(bin())
        .args(&v)
        .env("RDMINI_MAX_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "cap must reject the 4-worker topology");
    assert!(String::from_utf8_lossy(&out.stderr).contains("RDMINI_MAX_WORKERS"));

    let out = Command::new(bin())
        .args(&v)
        .env("RDMINI_MAX_WORKERS", "4")
        .output()
        .unwrap();
    assert!(out.status.success(), "4 workers fit under a cap of 4");
}

/// Re-reading the effective config reproduces an identical run: same
/// counts, same output checksum.
#[test]
fn config_round_trip_reproduces_the_run() {
    let dir1 = tmpdir("round1");
    let out = run_small("run", &dir1, &["--set", "solver.variant=classic"]);
    assert!(out.status.success());
    let effective = dir1.join("effective_config.toml");

    let dir2 = tmpdir("round2");
    let out = run(&[
        "run",
        "--config",
        effective.to_str().unwrap(),
        "--output",
        dir2.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let key_lines = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("run_report.txt"))
            .unwrap()
            .lines()
            .filter(|l| {
                l.starts_with("iterations_total")
                    || l.starts_with("reduction_events_total")
                    || l.starts_with("final_field_checksum")
                    || l.starts_with("# config_hash")
            })
            .map(String::from)
            .collect()
    };
    assert_eq!(key_lines(&dir1), key_lines(&dir2));
    let f1 = std::fs::read(dir1.join("final_field.bin")).unwrap();
    let f2 = std::fs::read(dir2.join("final_field.bin")).unwrap();
    assert_eq!(f1, f2);
}
