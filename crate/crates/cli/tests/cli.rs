use std::path::Path;
use std::process::Command;

use kp_cli::report::Report;

const PARTITION: &str = r#"
[kernel]
alpha = 1.5

[control]
eta = 0.1
rate = 0.5

[partition]
s = 0.0
t = 2.0
theta = 0.4
"#;

fn kp(dir: &Path, command: &str, config: &str) -> (i32, String) {
    let path = dir.join(format!("{command}.toml"));
    std::fs::write(&path, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kp"))
        .args([command, "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--threads", "1"])
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn report(dir: &Path, stem: &str) -> Report {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap()).unwrap()
}

#[test]
fn partition_rate_control() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = kp(dir.path(), "partition", PARTITION);
    assert_eq!(code, 0, "{stdout}");
    let r = report(dir.path(), "partition");
    let points: Vec<f64> = serde_json::from_value(r.results["points"].clone()).unwrap();
    assert_eq!(points, vec![0.0, 0.8, 1.6, 2.0]);
    assert_eq!(r.results["m"], 3);
    let csv = std::fs::read_to_string(dir.path().join("partition.partition.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("partition.timing.json").exists());
}

#[test]
fn reports_are_deterministic_and_echo_the_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kp(dir.path(), "partition", PARTITION).0, 0);
    let first = std::fs::read(dir.path().join("partition.json")).unwrap();
    assert_eq!(kp(dir.path(), "partition", PARTITION).0, 0);
    assert_eq!(first, std::fs::read(dir.path().join("partition.json")).unwrap());

    let echoed = report(dir.path(), "partition").config.to_toml();
    let again = tempfile::tempdir().unwrap();
    assert_eq!(kp(again.path(), "partition", &echoed).0, 0);
    assert_eq!(first, std::fs::read(again.path().join("partition.json")).unwrap());
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kp(dir.path(), "kernel", "[kernel]\nalpha = 2.5\n").0, 3);
    assert_eq!(kp(dir.path(), "partition", "[kernel]\nalpha = 1.5\n").0, 3);
    let bad_eta = "[kernel]\nalpha = 1.5\n[control]\neta = 0.6\nrate = 1.0\n";
    assert_eq!(kp(dir.path(), "series", bad_eta).0, 3);
}

#[test]
fn kernel_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[kernel]\nalpha = 1.0\n[kernel_table]\nt = [1.0]\nx = [0.0, 2.0]\n";
    let (code, stdout) = kp(dir.path(), "kernel", cfg);
    assert_eq!(code, 0, "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("kernel.kernel.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((row[2] - 1.0 / std::f64::consts::PI).abs() < 1e-9);
    assert_eq!(row[3], 0.0);
}

#[test]
fn zero_drift_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[kernel]
alpha = 1.5

[control]
eta = 0.0
rate = 0.0

[grid]
n_time = 8
n_space = 32
L = 20.0
grading = 3.0
tol = 1e-4
max_refine = 2

[samples]
t = [0.5]
x = [0.0]
y = [-1.0, 0.0, 1.0]
order = 3
"#;
    let (code, stdout) = kp(dir.path(), "series", cfg);
    assert_eq!(code, 0, "{stdout}");
    let r = report(dir.path(), "series");
    assert!(r.passed);
    for item in r.results.as_array().unwrap() {
        let terms: Vec<f64> = serde_json::from_value(item["terms"].clone()).unwrap();
        assert!(terms[1..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn jump_at_a_partition_point_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    // F jumps by 1 > theta at u = 1, which becomes a partition point
    let cfg = r#"
[kernel]
alpha = 1.5

[control]
eta = 0.1
f_knots = [[0.0, 0.0, 0.0], [1.0, 0.0, 1.0], [2.0, 1.0, 1.0]]

[partition]
s = 0.0
t = 2.0
theta = 0.4
"#;
    let (code, stdout) = kp(dir.path(), "partition", cfg);
    assert_eq!(code, 0, "{stdout}");
    let r = report(dir.path(), "partition");
    let points: Vec<f64> = serde_json::from_value(r.results["points"].clone()).unwrap();
    assert_eq!(points, vec![0.0, 1.0, 2.0]);
    assert_eq!(r.results["max_jump"], 0.0);
}
