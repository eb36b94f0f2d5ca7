use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rosspuf"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("spawn rosspuf");
    assert!(
        out.status.success(),
        "rosspuf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A config small enough for debug-speed tests.
fn small_config(dir: &Path, edit: impl FnOnce(&mut Value)) {
    run(dir, &["init-config", "--out", "cfg.json"]);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("cfg.json")).unwrap()).unwrap();
    v["output_dir"] = "o".into();
    v["keygen"]["calibration_crps"] = 40.into();
    v["sweep"]["m_bits"] = serde_json::json!([3, 16]);
    v["sweep"]["n_bits"] = serde_json::json!([1, 4]);
    v["sweep"]["mrr_counts"] = serde_json::json!([1, 2]);
    v["sweep"]["budget"] = serde_json::json!({"calibration_crps": 20, "intra_trials": 5, "inter_challenges": 6});
    v["ecc"]["trials"] = 6.into();
    v["ecc"]["t_values"] = serde_json::json!([0, 20, 40]);
    v["nist"]["keys"] = 20.into();
    v["nist"]["sequence_len"] = 4000.into();
    edit(&mut v);
    std::fs::write(dir.join("cfg.json"), serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn init_config_prints_valid_json() {
    let out = bin().arg("init-config").output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema"], "rosspuf.experiment/1");
}

#[test]
fn fabricate_and_respond_are_reproducible_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "3")] {
        small_config(dir, |_| {});
        run(dir, &["--jobs", jobs, "fabricate", "--config", "cfg.json"]);
        run(dir, &["--jobs", jobs, "challenge", "--config", "cfg.json", "--seed", "7"]);
        run(
            dir,
            &["--jobs", jobs, "respond", "--config", "cfg.json", "--device", "o/device.json", "--challenge-seed", "7"],
        );
    }
    for f in ["o/device.json", "o/challenge-7.json", "o/calibration.json", "o/response-7.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    let resp: Value = serde_json::from_slice(&read(a.path(), "o/response-7.json")).unwrap();
    assert_eq!(resp["data"]["response"]["key"]["bits"]["len"], 1060);
}

#[test]
fn no_calibrate_requires_an_existing_file() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_config(dir, |_| {});
    run(dir, &["fabricate", "--config", "cfg.json"]);
    let out = bin()
        .current_dir(dir)
        .args(["respond", "--config", "cfg.json", "--device", "o/device.json", "--challenge-seed", "1", "--no-calibrate"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}

#[test]
fn enroll_then_reconstruct_accepts_repeat_and_rejects_other_challenge() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_config(dir, |v| v["ridge"]["lambda"] = 1e3.into());
    run(dir, &["fabricate", "--config", "cfg.json"]);
    let respond = |seed: &str, noise: &str, out: &str| {
        run(
            dir,
            &[
                "respond", "--config", "cfg.json", "--device", "o/device.json", "--challenge-seed", seed,
                "--noise-seed", noise, "--out", out,
            ],
        );
    };
    respond("3", "100", "o/ref.json");
    respond("3", "101", "o/repeat.json");
    respond("4", "102", "o/other.json");
    run(dir, &["enroll", "--response", "o/ref.json", "--t", "40", "--out", "o/helper.json"]);
    run(dir, &["reconstruct", "--helper", "o/helper.json", "--response", "o/repeat.json", "--out", "o/key.txt"]);

    let reference: Value = serde_json::from_slice(&read(dir, "o/ref.json")).unwrap();
    let key = String::from_utf8(read(dir, "o/key.txt")).unwrap();
    assert_eq!(key.trim().len(), 1060);
    let bytes = reference["data"]["response"]["key"]["bits"]["hex"].as_str().unwrap().to_string();
    assert!(!bytes.is_empty());

    let out = bin()
        .current_dir(dir)
        .args(["reconstruct", "--helper", "o/helper.json", "--response", "o/other.json"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "a different challenge must be rejected");
}

#[test]
fn sweeps_write_csv_with_provenance() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_config(dir, |_| {});
    run(dir, &["sweep", "bitgrid", "--config", "cfg.json"]);
    run(dir, &["sweep", "ecc", "--config", "cfg.json"]);
    let grid = String::from_utf8(read(dir, "o/bitgrid.csv")).unwrap();
    let lines: Vec<_> = grid.lines().collect();
    assert!(lines[0].starts_with("# config_digest="));
    assert!(lines[2].starts_with("m_bit,n_bit,key_bits"));
    assert_eq!(lines.len(), 3 + 4);
    let ecc = String::from_utf8(read(dir, "o/ecc.csv")).unwrap();
    assert_eq!(ecc.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3);
    for f in ["o/hist_intra.csv", "o/hist_inter.csv", "o/flips.csv", "o/nmse.csv"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn nist_export_round_trips_through_bits_input() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    small_config(dir, |_| {});
    run(dir, &["nist", "--config", "cfg.json", "--export", "o/bits.bin"]);
    run(
        dir,
        &["nist", "--config", "cfg.json", "--bits", "o/bits.bin", "--format", "packed", "--out-dir", "o2"],
    );
    let a: Value = serde_json::from_slice(&read(dir, "o/nist.json")).unwrap();
    let b: Value = serde_json::from_slice(&read(dir, "o2/nist.json")).unwrap();
    assert_eq!(a["data"], b["data"]);
    assert_eq!(read(dir, "o/nist.txt"), read(dir, "o2/nist.txt"));
}
