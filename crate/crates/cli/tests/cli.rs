use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fedpoison(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedpoison")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_reports_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("example.json");
    let res = fedpoison(&["run", path_str(&cfg), "--out", path_str(out.path()), "--trials", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["report.json", "rounds.csv", "timing.json"] {
        assert!(out.path().join(f).is_file(), "missing {f}");
    }
    let report = fedpoison_cli::read_report(out.path()).unwrap();
    assert_eq!(report.trials.len(), 1);
    assert_eq!(report.config.rounds, 10);
    let csv = std::fs::read_to_string(out.path().join("rounds.csv")).unwrap();
    assert!(csv.starts_with("trial,round,metric,value\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn seed_flag_overrides_the_config() {
    let cfg = configs().join("example.json");
    let reports: Vec<_> = ["1", "1", "2"]
        .iter()
        .map(|seed| {
            let out = tempfile::tempdir().unwrap();
            let res = fedpoison(&["run", path_str(&cfg), "--out", path_str(out.path()), "--trials", "1", "--seed", seed]);
            assert!(res.status.success());
            std::fs::read(out.path().join("report.json")).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_ne!(reports[0], reports[2]);
}

#[test]
fn sweep_over_compromised_writes_one_row_per_cell() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("sweep_m.json");
    let res = fedpoison(&["sweep", path_str(&cfg), "--out", path_str(out.path()), "--threads", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 7, "{summary}");
    assert!(rows[0].starts_with("compromised,"));
    let m: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(m, ["0", "2", "4", "6", "8", "10"]);
    assert!(out.path().join("cell-005/report.json").is_file());
}

#[test]
fn oracle_prints_match_per_instance() {
    let res = fedpoison(&["oracle", path_str(&configs().join("oracle.json"))]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1000);
    assert!(stdout.lines().all(|l| l.ends_with(": MATCH")));
}

#[test]
fn bad_configs_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"clients\": 4,\n  \"compromised\": 4,\n  \"rounds\": 1,\n  \"model\": { \"kind\": \"mlp\" },\n  \"data\": { \"source\": \"synthetic-regression\", \"train_size\": 10, \"test_size\": 5, \"dim\": 2, \"noise\": 0.1 }\n}\n").unwrap();
    let res = fedpoison(&["run", path_str(&bad), "--out", path_str(dir.path())]);
    assert!(!res.status.success());
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("bad.json:3") && err.contains("compromised"), "{err}");

    let res = fedpoison(&["run", path_str(&dir.path().join("missing.json"))]);
    assert!(!res.status.success());
    assert!(String::from_utf8(res.stderr).unwrap().contains("missing.json"));

    let res = fedpoison(&["sweep", path_str(&configs().join("example.json"))]);
    assert!(!res.status.success());
}
