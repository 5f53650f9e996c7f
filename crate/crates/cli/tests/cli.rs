//! End-to-end checks of the command-line interface: exit codes, validation
//! messages, provenance stamping, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_causalqm")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("causalqm-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn quick_config_1d(sigma: f64) -> String {
    format!(
        r#"
[grid]
lo = [-12.0]
hi = [12.0]
points = [128]

[wavefunction]
kind = "gaussian"

[[wavefunction.terms]]
center = [0.0]
sigma = [{sigma}]

[potential]
kind = "free"
masses = [1.0]

[time]
dt_evolve = 0.005
snapshot_stride = 10
snapshots = 4

[ensemble]
particles = 2000
seed = 11
"#
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn evolve_writes_snapshots_and_reruns_byte_identically() {
    let dir = temp_dir("evolve");
    let cfg = write_config(&dir, "run.toml", &quick_config_1d(1.0));
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let status = Command::new(bin())
            .args(["evolve", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    // snapshots 0..=4 present
    for k in 0..=4 {
        assert!(out_a.join(format!("density_{k:04}.csv")).exists());
    }
    // deterministic outputs: identical bytes across reruns
    for name in ["density_0004.csv", "wavefunction_re_0002.csv", "evolve_summary.json"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
    // provenance comment leads every csv
    let head = std::fs::read_to_string(out_a.join("density_0000.csv")).unwrap();
    assert!(head.starts_with("# config_hash="));
    assert!(head.contains("seed=11"));
    // norms logged at one
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("evolve_summary.json")).unwrap())
            .unwrap();
    for snap in summary["snapshots"].as_array().unwrap() {
        let norm = snap["norm"].as_f64().unwrap();
        assert!((norm - 1.0).abs() < 1e-8);
    }
}

#[test]
fn invalid_config_names_the_field_and_exits_2() {
    let dir = temp_dir("badcfg");
    let cfg = write_config(&dir, "bad.toml", &quick_config_1d(-1.0));
    let output = Command::new(bin())
        .args(["evolve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("wavefunction.terms[0].sigma[0]"),
        "stderr: {stderr}"
    );
}

#[test]
fn missing_config_file_exits_2() {
    let output = Command::new(bin())
        .args(["fields", "--config", "/nonexistent/path.toml"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fields_writes_the_residual_summary_without_w_in_1d() {
    let dir = temp_dir("fields1d");
    let cfg = write_config(&dir, "run.toml", &quick_config_1d(1.0));
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["fields", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("map_p1_0000.csv").exists());
    assert!(out.join("velocity_v1_0000.csv").exists());
    assert!(!out.join("w12_0000.csv").exists(), "no W field in 1d");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fields_summary.json")).unwrap())
            .unwrap();
    let snaps = summary["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), 5);
    for s in snaps {
        assert!(s["continuity_dbb_max"].as_f64().unwrap() < 1e-8);
    }
}

#[test]
fn trajectories_compare_reports_zero_divergence_in_1d() {
    let dir = temp_dir("traj1d");
    let cfg = write_config(&dir, "run.toml", &quick_config_1d(1.0));
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["trajectories", "--flow", "dbb", "--compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("trajectories_dbb.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "particle,t,x1,p1,escaped");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("trajectories_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["flow"], "dbb");
    // assembled and dBB flows coincide in one dimension
    let rms = report["comparison"]["rms_divergence"].as_array().unwrap();
    let last = rms.last().unwrap().as_f64().unwrap();
    assert!(last < 1e-6, "1d divergence {last}");
    // equivariance table is present with finite entries
    for row in report["equivariance"].as_array().unwrap() {
        for ks in row["ks"].as_array().unwrap() {
            assert!(ks.as_f64().unwrap().is_finite());
        }
    }
}

#[test]
fn verify_negative_control_fails_with_the_check_named() {
    // a tiny verify run on one branch with an injected map corruption must
    // exit 1 and name the failing marginal check
    let dir = temp_dir("verify-neg");
    let mut cfg_body = quick_config_1d(1.0);
    cfg_body.push_str("\n[tolerances]\nverify_samples = 20000\n");
    let cfg = write_config(&dir, "run.toml", &cfg_body);
    let out = dir.join("out");
    let output = Command::new(bin())
        .args(["verify", "--inject-corrupt-map", "--branch", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "corrupted map must fail");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        stdout.contains("[FAIL] criterion 1"),
        "failing check not named:\n{stdout}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], false);
}
