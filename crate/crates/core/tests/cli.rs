use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mppi-bounds"));
    cmd.env_remove("MPPI_BOUNDS_OUT");
    cmd
}

fn write_config(dir: &Path, name: &str, doc: &Value) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(doc).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap().to_string();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (meta, header, rows)
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].as_str()).collect()
}

#[test]
fn complexity_defaults_write_table_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["complexity"], None, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (meta, header, rows) = read_csv(&dir.path().join("complexity.csv"));
    assert!(meta.starts_with("# tool=mppi-bounds version="));
    for key in ["config_sha256=", "seed=1", "delta_mode=folded", "hoeffding_form=eq9"] {
        assert!(meta.contains(key), "{meta}");
    }
    assert_eq!(&header[..7], ["param", "T", "N2", "multiplier", "N1", "mode", "overflow"]);
    assert_eq!(rows.len(), 12);
    assert!(column(&header, &rows, "N1").iter().all(|&n| n == "18445"));
    let params = column(&header, &rows, "param");
    let overflow = column(&header, &rows, "overflow");
    assert!(params.iter().zip(&overflow).filter(|(p, _)| **p == "0.1").all(|(_, o)| *o == "true"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["complexity", "--seed", "9", "--hoeffding-form", "prop1", "--delta-mode", "diffusion"], None, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (meta, header, rows) = read_csv(&dir.path().join("complexity.csv"));
    assert!(meta.contains("seed=9") && meta.contains("hoeffding_form=prop1") && meta.contains("delta_mode=diffusion"), "{meta}");
    assert!(column(&header, &rows, "N1").iter().all(|&n| n == "36889"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("complexity").env("MPPI_BOUNDS_OUT", dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("complexity.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("complexity.csv"));
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &json!({"version": 1, "kind": "uav", "pi": {"num_sampels": 10}}));
    let out = run(&["uav"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pi.num_sampels"), "{err}");
}

#[test]
fn invalid_documents_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("uav", json!({"version": 1, "kind": "ugv"})),
        ("uav", json!({"version": 3, "kind": "uav"})),
        ("uav", json!({"version": 1, "kind": "uav", "model": {"a_values": [0.9]}})),
        ("complexity", json!({"version": 1, "kind": "complexity-table", "complexity": {"eps1": -1.0}})),
    ];
    for (i, (sub, doc)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.json"), doc);
        let out = run(&[sub], Some(&cfg), dir.path());
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["uav"], Some(&missing), dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("broken.json"), "{not json").unwrap();
    assert_eq!(run(&["uav"], Some(&dir.path().join("broken.json")), dir.path()).status.code(), Some(2));
}

#[test]
fn bad_flag_value_is_usage_error() {
    let out = bin().args(["complexity", "--delta-mode", "sideways"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uav_without_obstacles_runs() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "version": 1, "kind": "uav",
        "model": {"a_values": [-0.5, 0.0]},
        "cost": {"obstacles": []},
        "pi": {"num_samples": 100, "horizon": 10},
        "closed_loop": {"runs": 2, "outer_steps": 5}
    });
    let cfg = write_config(dir.path(), "uav.json", &doc);
    let out = run(&["uav"], Some(&cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8_lossy(&out.stdout);
    assert_eq!(listed.lines().filter(|l| l.contains("uav_path_")).count(), 4);
    let (_, header, rows) = read_csv(&dir.path().join("uav_path_a-0.5_run0.csv"));
    assert_eq!(header, ["step", "x", "y", "vx", "vy", "u1", "u2"]);
    assert_eq!(rows.len(), 5);
    let (_, header, rows) = read_csv(&dir.path().join("uav_summary.csv"));
    assert_eq!(rows.len(), 4);
    assert!(column(&header, &rows, "penetrations").iter().all(|&p| p == "0"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "version": 1, "kind": "complexity-table",
        "cost": {"q": [0.1, 0.1, 0.0001, 0.0001], "q_terminal": [0.1, 0.1, 0.0001, 0.0001], "target": [1.0, 1.0, 0.0, 0.0], "obstacles": [], "omega_c": 0.0},
        "complexity": {"route": "empirical", "model": "simple-car", "horizons": [30], "pilot_samples": 2000}
    });
    let cfg = write_config(dir.path(), "c.json", &doc);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let out_dir = dir.path().join(format!("o{i}"));
        let out = run(&["complexity", "--threads", threads], Some(&cfg), &out_dir);
        assert!(out.status.success());
        outputs.push(std::fs::read(out_dir.join("complexity.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn diverged_run_exits_zero_with_flag() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "version": 1, "kind": "uav",
        "model": {"a_values": [0.5], "x0": [0.0, 0.0, 1000.0, 1000.0]},
        "pi": {"num_samples": 50, "horizon": 5},
        "closed_loop": {"runs": 1, "outer_steps": 500}
    });
    let cfg = write_config(dir.path(), "div.json", &doc);
    let out = run(&["uav"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, header, rows) = read_csv(&dir.path().join("uav_summary.csv"));
    assert_eq!(column(&header, &rows, "diverged"), ["true"]);
    let steps: usize = column(&header, &rows, "steps")[0].parse().unwrap();
    assert!(steps < 500);
    let (_, _, path) = read_csv(&dir.path().join("uav_path_a0.5_run0.csv"));
    assert_eq!(path.len(), steps);
}
