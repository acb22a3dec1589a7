use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn manifest(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../manifests").join(name)
}

fn pvl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn verify_default_manifest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("default.toml");
    let o = pvl(dir.path(), &["verify", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("results/incentive_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["schema"], "incentive_report.v1");
    assert_eq!(v["passed"], true);
}

#[test]
fn missing_manifest_exits_one_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvl(dir.path(), &["verify", "--manifest", "/no/such/manifest.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/manifest.toml"));
}

#[test]
fn malformed_manifest_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "alpha_typo = 3\n").unwrap();
    let o = pvl(dir.path(), &["plan-a", "--manifest", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_episode_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("smoke.toml");
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        let o = pvl(&out, &["run-episode", "--manifest", m.to_str().unwrap(), "--seed", "7", "--policy", "offset=2"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let t = std::fs::read(out.join("traces/episode_s7_e0.jsonl")).unwrap();
        let d = std::fs::read(out.join("traces/episode_s7_e0_detections.csv")).unwrap();
        (t, d)
    };
    assert_eq!(read("one"), read("two"));
}

#[test]
fn unknown_policy_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvl(dir.path(), &["run-episode", "--policy", "sneaky"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn effective_rho_prints_a_probability() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvl(dir.path(), &["effective-rho", "--sigma", "0", "--deviation", "3", "--samples", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let rho: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert_eq!(rho, 1.0);
}
