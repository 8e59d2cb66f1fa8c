//! End-to-end checks of the command-line front door: exit codes, output
//! files, and the validate replay path.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn poasim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poasim"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("poasim-cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

#[test]
fn run_writes_trace_report_and_chain() {
    let dir = tmp_dir("run");
    run_ok(
        poasim()
            .arg("run")
            .arg("--scenario")
            .arg(scenarios().join("minimal.toml"))
            .arg("--seed")
            .arg("1")
            .arg("--policy")
            .arg("wbs")
            .arg("--out")
            .arg(&dir),
    );
    assert!(dir.join("minimal_wbs_1.trace").exists());
    assert!(dir.join("minimal_wbs_1.chain").exists());
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("minimal_wbs_1.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["counts"]["created"], 1);
    assert_eq!(report["counts"]["committed"], 1);
    assert_eq!(report["policy"], "wbs");
}

#[test]
fn invalid_config_exits_one_with_field_diagnostic() {
    let dir = tmp_dir("badcfg");
    let bad = dir.join("bad.toml");
    let text = std::fs::read_to_string(scenarios().join("minimal.toml"))
        .unwrap()
        .replace("sensor_count = 2", "sensor_count = 0");
    std::fs::write(&bad, text).unwrap();
    let out = poasim()
        .arg("run")
        .arg("--scenario")
        .arg(&bad)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("wsn.sensor_count"), "stderr: {stderr}");
}

#[test]
fn unknown_policy_exits_one() {
    let out = poasim()
        .arg("run")
        .arg("--scenario")
        .arg(scenarios().join("minimal.toml"))
        .arg("--policy")
        .arg("sideways")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_accepts_good_trace_and_flags_corruption() {
    let dir = tmp_dir("validate");
    run_ok(
        poasim()
            .arg("run")
            .arg("--scenario")
            .arg(scenarios().join("minimal.toml"))
            .arg("--out")
            .arg(&dir),
    );
    let trace = dir.join("minimal_wbs_1.trace");
    run_ok(poasim().arg("validate").arg("--trace").arg(&trace));

    // strip a committed-energy debit so conservation no longer balances
    let text = std::fs::read_to_string(&trace).unwrap();
    let corrupted: String = text
        .lines()
        .filter(|l| !(l.starts_with("DEBIT") && l.contains("compute_idle")))
        .map(|l| format!("{l}\n"))
        .collect();
    let bad = dir.join("corrupted.trace");
    std::fs::write(&bad, corrupted).unwrap();
    let out = poasim()
        .arg("validate")
        .arg("--trace")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conservation"));
}

#[test]
fn validate_missing_file_exits_three() {
    let out = poasim()
        .arg("validate")
        .arg("--trace")
        .arg("/nonexistent/path.trace")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_writes_per_seed_reports_and_aggregate_csv() {
    let dir = tmp_dir("compare");
    let fast = dir.join("fast.toml");
    let text = std::fs::read_to_string(scenarios().join("minimal.toml"))
        .unwrap()
        .replace("duration_s = 45.0", "duration_s = 100.0");
    std::fs::write(&fast, text).unwrap();
    let out = run_ok(
        poasim()
            .arg("compare")
            .arg("--scenario")
            .arg(&fast)
            .arg("--seeds")
            .arg("1..3")
            .arg("--sizes")
            .arg("16,32")
            .arg("--validators")
            .arg("1,2")
            .arg("--out")
            .arg(&dir),
    );
    for seed in 1..=3 {
        assert!(dir.join(format!("minimal_tbs_{seed}.report.json")).exists());
        assert!(dir.join(format!("minimal_wbs_{seed}.report.json")).exists());
    }
    let csv = std::fs::read_to_string(dir.join("minimal_comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 1); // header, three seeds, mean
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .starts_with("seed,response_base_s"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
    let sizes = std::fs::read_to_string(dir.join("minimal_sizes.csv")).unwrap();
    assert_eq!(sizes.lines().count(), 1 + 2 * 2); // header, two sizes x two policies
    let grid = std::fs::read_to_string(dir.join("minimal_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2 * 2); // header, two fleets x two policies
    assert!(grid
        .lines()
        .next()
        .unwrap()
        .starts_with("validators,interval_s,policy"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed,response_base_s"));
}

#[test]
fn out_dir_env_var_is_honored() {
    let dir = tmp_dir("envvar");
    run_ok(
        poasim()
            .arg("run")
            .arg("--scenario")
            .arg(scenarios().join("minimal.toml"))
            .env("POASIM_OUT_DIR", &dir),
    );
    assert!(dir.join("minimal_wbs_1.trace").exists());
}
