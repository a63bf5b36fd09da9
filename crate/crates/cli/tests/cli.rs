use std::fs;
use std::process::{Command, Output};

fn potr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_potr")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = potr(&[
        "sweep",
        "--episodes",
        "2",
        "--delays",
        "0,2",
        "--methods",
        "naive,potr",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("potr"));

    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    // header + 2 methods * 2 delays * 2 suites * 2 episodes
    assert_eq!(rows.lines().count(), 1 + 16);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregate_delays"], serde_json::json!([2]));

    let again = potr(&["summarize", out_dir.join("rows.csv").to_str().unwrap(), "--json"]);
    assert_eq!(again.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert_eq!(parsed, summary);
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "episodes_per_cell = 7\nseed_base = 3\n[guidance]\nrho = 0.75\n").unwrap();
    let out = potr(&[
        "show-config",
        "--config",
        path.to_str().unwrap(),
        "--seed-base",
        "9",
        "--set",
        "guidance.sigma_d=0.6",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("episodes_per_cell = 7"), "{text}");
    assert!(text.contains("seed_base = 9"), "{text}");
    assert!(text.contains("rho = 0.75"), "{text}");
    assert!(text.contains("sigma_d = 0.6"), "{text}");
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(potr(&["sweep", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(potr(&["sweep", "--set", "episodes_per_cell=0"]).status.code(), Some(1));
    assert_eq!(potr(&["sweep", "--methods", "bid"]).status.code(), Some(1));
    assert_eq!(potr(&["sweep", "--delays", "9"]).status.code(), Some(1));
}

#[test]
fn grid_rho_includes_unbounded_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = potr(&[
        "grid-rho",
        "--episodes",
        "1",
        "--values",
        "0.25,inf",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("grid_rho.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rho,success,steps,l2_m,l2_M,acc,jerk");
    assert!(lines[1].starts_with("0.25,"));
    assert!(lines[2].starts_with("inf,"));
}

#[test]
fn quick_verify_passes() {
    let out = potr(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
}
