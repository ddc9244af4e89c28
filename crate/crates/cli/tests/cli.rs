use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/replay.json")
}

fn mirage(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirage"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(out: &Path, ext: &str) -> Vec<u8> {
    std::fs::read(out.join("runs/replay").join(format!("report.{ext}"))).unwrap()
}

#[test]
fn replay_run_is_deterministic_and_resumes_without_calls() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = mirage(&["run"], a.path());
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(mirage(&["run"], b.path()).status.success());
    assert_eq!(report(a.path(), "json"), report(b.path(), "json"));
    assert_eq!(report(a.path(), "csv"), report(b.path(), "csv"));

    let again = mirage(&["run"], a.path());
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--resume"));

    let resumed = mirage(&["--resume", "run"], a.path());
    assert!(resumed.status.success());
    assert!(stderr(&resumed).contains("provider calls: 0 live"), "{}", stderr(&resumed));
    assert_eq!(report(a.path(), "json"), report(b.path(), "json"));
}

#[test]
fn stages_one_by_one_match_the_full_run() {
    let whole = tempfile::tempdir().unwrap();
    assert!(mirage(&["run"], whole.path()).status.success());

    let staged = tempfile::tempdir().unwrap();
    for stage in [&["generate"][..], &["perturb"], &["review-serve", "--auto-accept"], &["classify"]] {
        let o = mirage(stage, staged.path());
        assert!(o.status.success(), "{stage:?}: {}", stderr(&o));
    }
    let csv = mirage(&["report", "--format", "csv"], staged.path());
    assert!(csv.status.success());
    assert_eq!(csv.stdout, report(whole.path(), "csv"));
    assert_eq!(report(staged.path(), "json"), report(whole.path(), "json"));
    assert!(String::from_utf8_lossy(&csv.stdout)
        .starts_with("metric,total_aggregation,Total,Science,Technology,Engineering,Medicine\n"));
}

#[test]
fn stage_gating_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mirage(&["generate"], dir.path()).status.success());
    let o = mirage(&["classify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`perturb`"), "{}", stderr(&o));
    let o = mirage(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`classify`"), "{}", stderr(&o));
}

#[test]
fn perturb_on_a_missing_run_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mirage(&["perturb"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture_config())
        .unwrap()
        .replace("\"m\": 2", "\"m\": 0");
    std::fs::write(&cfg, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mirage"))
        .args(["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("m must be at least 1"), "{}", stderr(&o));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn missing_fixture_is_provider_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let o = mirage(&["--seed", "99", "run"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn plan_reports_default_counts() {
    let o = Command::new(env!("CARGO_BIN_EXE_mirage")).arg("plan").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.matches("102 perturbed tasks").count(), 4);
    assert!(text.contains("408 perturbed tasks"));
}
