//! End-to-end tests of the scin-sim binary: exit codes, artifacts, and
//! byte-reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_scin-sim")
}

fn bundled(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

#[test]
fn calibration_points_pass_within_tolerance() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&["--calibrate", "--out", out.path().to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let csv = fs::read_to_string(out.path().join("calibration.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{csv}");
    for row in rows {
        assert!(row.ends_with(",true"), "calibration point failed: {row}");
    }
}

#[test]
fn single_verified_run_writes_report_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(
        out.path(),
        "spec.json",
        r#"[{ "op": "allreduce", "algorithm": "scin", "message_bytes": 4096,
             "verify": true, "label": "small" }]"#,
    );
    let result = run(&[
        "--config",
        bundled("configs/prototype.toml").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    let csv = fs::read_to_string(out.path().join("runs.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[1].starts_with("small,scin,4096,"), "{csv}");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("report_small.json")).unwrap())
            .unwrap();
    assert_eq!(report["algorithm"], "scin");
    assert_eq!(report["message_bytes"], 4096);
    assert!(report["total_time_ps"].as_u64().unwrap() > 0);
    assert!(report["correctness_digest"].is_string());
}

#[test]
fn empty_spec_list_succeeds_with_empty_report() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(out.path(), "spec.json", "[]");
    let result = run(&[
        "--config",
        bundled("configs/prototype.toml").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let csv = fs::read_to_string(out.path().join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "only the header: {csv}");
}

#[test]
fn malformed_config_exits_2_naming_the_line() {
    let out = tempfile::tempdir().unwrap();
    let config = out.path().join("bad.toml");
    fs::write(&config, "num_accelerators = 4\nlink_latency_ns: 360\n").unwrap();
    let spec = write_spec(out.path(), "spec.json", "[]");
    let result = run(&[
        "--config",
        config.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn unknown_algorithm_exits_2_listing_the_names() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(
        out.path(),
        "spec.json",
        r#"[{ "op": "allreduce", "algorithm": "warp", "message_bytes": 4096 }]"#,
    );
    let result = run(&[
        "--config",
        bundled("configs/prototype.toml").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("scin-inq"), "{stderr}");
}

#[test]
fn missing_config_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(out.path(), "spec.json", "[]");
    let result = run(&["--spec", spec.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let spec_dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        spec_dir.path(),
        "spec.json",
        r#"[{ "op": "allreduce", "algorithm": "scin-inq", "message_bytes": 16384,
             "verify": true, "label": "rerun" },
            { "op": "size-sweep", "algorithms": ["ring"], "message_bytes": [4096, 16384] }]"#,
    );
    let mut artifacts: Vec<Vec<u8>> = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let result = run(&[
            "--config",
            bundled("configs/prototype.toml").to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
            "--workers",
            "3",
        ]);
        assert!(result.status.success());
        let mut bytes = fs::read(out.path().join("runs.csv")).unwrap();
        bytes.extend(fs::read(out.path().join("report_rerun.json")).unwrap());
        bytes.extend(fs::read(out.path().join("bandwidth_job1.csv")).unwrap());
        artifacts.push(bytes);
    }
    assert_eq!(artifacts[0], artifacts[1], "artifacts drifted between reruns");
}

#[test]
fn seed_flag_changes_the_verified_digest() {
    let spec_dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        spec_dir.path(),
        "spec.json",
        r#"[{ "op": "allreduce", "algorithm": "scin", "message_bytes": 4096,
             "verify": true, "label": "seeded" }]"#,
    );
    let digest_for = |seed: &str| {
        let out = tempfile::tempdir().unwrap();
        let result = run(&[
            "--config",
            bundled("configs/prototype.toml").to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(result.status.success());
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(out.path().join("report_seeded.json")).unwrap(),
        )
        .unwrap();
        report["correctness_digest"].as_str().unwrap().to_string()
    };
    assert_ne!(digest_for("1"), digest_for("2"));
}

#[test]
fn wave_sweep_reports_monotone_bandwidth_and_saturation() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(
        out.path(),
        "spec.json",
        r#"[{ "op": "wave-sweep", "buffer_bytes": 65536, "wave_counts": [1, 4, 16],
             "message_bytes": 1048576, "algorithm": "scin" }]"#,
    );
    let result = run(&[
        "--config",
        bundled("configs/prototype.toml").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let csv = fs::read_to_string(out.path().join("waves_job0.csv")).unwrap();
    let bandwidths: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|row| row.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(bandwidths.len(), 3, "{csv}");
    assert!(
        bandwidths.windows(2).all(|w| w[1] >= w[0]),
        "bandwidth must not fall as waves increase: {bandwidths:?}"
    );
    assert!(csv.lines().last().unwrap().ends_with(",true"), "{csv}");
}

#[test]
fn trace_flag_writes_a_fabric_log() {
    let out = tempfile::tempdir().unwrap();
    let spec = write_spec(
        out.path(),
        "spec.json",
        r#"[{ "op": "allreduce", "algorithm": "scin", "message_bytes": 4096 }]"#,
    );
    let trace = out.path().join("fabric_trace.csv");
    let result = run(&[
        "--config",
        bundled("configs/prototype.toml").to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let log = fs::read_to_string(&trace).unwrap();
    assert!(log.lines().count() > 1, "trace should hold events: {log}");
}
