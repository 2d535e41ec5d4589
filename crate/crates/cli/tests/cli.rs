use std::path::Path;
use std::process::{Command, Output};

fn bugsize(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bugsize"))
        .args(args)
        .env_remove("BUGSIZE_OUT_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn small_fit(dir: &Path, extra: &[&str]) -> Output {
    let campaign = dir.join("c.csv");
    write(
        &campaign,
        "mission,phase,test_cases,bugs_detected\nA,1,20,2\nA,2,5,0\nB,1,12,1\nB,2,0,0\n",
    );
    let mut args = vec!["fit", "--campaign", s(&campaign), "--iters", "100"];
    if !extra.contains(&"--max-bugs") {
        args.extend(["--max-bugs", "30"]);
    }
    args.extend_from_slice(extra);
    bugsize(&args)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&bugsize(&["--help"])), 0);
    assert_eq!(code(&bugsize(&["--version"])), 0);
    assert_eq!(code(&bugsize(&["fit", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bugsize(&[])), 1);
    assert_eq!(code(&bugsize(&["fit"])), 1);
    assert_eq!(code(&bugsize(&["simulate", "--missions", "many"])), 1);
    assert_eq!(code(&bugsize(&["frobnicate"])), 1);
}

#[test]
fn simulate_writes_campaign_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = bugsize(&["simulate", "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("campaign.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 30 * 8);
    assert!(dir.path().join("truth.json").exists());
}

#[test]
fn simulate_without_bugs_gives_empty_detections() {
    let dir = tempfile::tempdir().unwrap();
    let out = bugsize(&["simulate", "--true-bugs", "0", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("campaign.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn simulate_rejects_inverted_test_case_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = bugsize(&[
        "simulate",
        "--t-min",
        "60",
        "--t-max",
        "50",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("t_min"));
}

#[test]
fn fit_smoke_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = small_fit(dir.path(), &["--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("95% CI"));
    assert!(stdout.contains("worst R-hat"));
    assert!(out_dir.join("draws.csv").exists());
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bugsize"))
        .args([
            "simulate",
            "--missions",
            "2",
            "--phases",
            "2",
            "--true-bugs",
            "3",
        ])
        .env("BUGSIZE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("campaign.csv").exists());
}

#[test]
fn fit_refuses_small_ceiling() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_fit(dir.path(), &["--max-bugs", "2", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("ceiling"), "{}", stderr(&out));
}

#[test]
fn fit_missing_campaign_fails() {
    let out = bugsize(&["fit", "--campaign", "/nonexistent/campaign.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn strict_mode_turns_warnings_into_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let lenient = small_fit(dir.path(), &["--rhat-warn", "0.5", "--out", s(dir.path())]);
    assert_eq!(code(&lenient), 0);
    assert!(stderr(&lenient).contains("warning"));
    let strict = small_fit(
        dir.path(),
        &["--rhat-warn", "0.5", "--strict", "--out", s(dir.path())],
    );
    assert_eq!(code(&strict), 2);
}

#[test]
fn diagnose_filters_and_exports_traces() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_fit(dir.path(), &["--out", s(dir.path())])), 0);
    let draws = dir.path().join("draws.csv");
    let traces = dir.path().join("traces");
    let out = bugsize(&[
        "diagnose",
        "--draws",
        s(&draws),
        "--params",
        "psi,N,S[30]",
        "--out",
        s(&traces),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["trace_psi.csv", "trace_N.csv", "trace_S_30.csv"] {
        assert!(traces.join(name).exists(), "{name}");
    }

    let out = bugsize(&["diagnose", "--draws", s(&draws), "--params", "theta"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("theta") && err.contains("psi"), "{err}");
}

#[test]
fn diagnose_needs_two_chains() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&small_fit(
            dir.path(),
            &["--chains", "1", "--out", s(dir.path())]
        )),
        0
    );
    let out = bugsize(&["diagnose", "--draws", s(&dir.path().join("draws.csv"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("need ≥2 chains"));
}

#[test]
fn reliability_curve_and_epsilon_validation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_fit(dir.path(), &["--out", s(dir.path())])), 0);
    let draws = dir.path().join("draws.csv");
    let curve = dir.path().join("curve.csv");

    let out = bugsize(&[
        "reliability",
        "--draws",
        s(&draws),
        "--epsilon",
        "50",
        "--out",
        s(&curve),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().next(), Some("epsilon,reliability"));
    assert_eq!(text.lines().count(), 2);

    let out = bugsize(&["reliability", "--draws", s(&draws), "--epsilon", "120,100"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("increasing"));
}

#[test]
fn report_from_draws() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_fit(dir.path(), &["--out", s(dir.path())])), 0);
    let summary = dir.path().join("summary.json");
    let out = bugsize(&[
        "report",
        "--draws",
        s(&dir.path().join("draws.csv")),
        "--out",
        s(&summary),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.contains("bugsize-report/1"));
}
