use std::path::Path;
use std::process::{Command, Output};

use somamba::fieldio::read_field;

fn somamba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somamba"))
        .current_dir(dir)
        .env_remove("SOMAMBA_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"{
  "size": 32,
  "model": {"groups": 1, "ssm": {"d_model": 8, "d_state": 4, "d_head": 8, "rank": 2, "chunk": 8}}
}"#;

#[test]
fn mask_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&somamba(
        dir.path(),
        &[
            "mask",
            "--kind",
            "equispaced",
            "--width",
            "8",
            "--af",
            "4",
            "--center-frac",
            "0.25",
            "-o",
            "m.fld",
        ],
    ));
    assert!(stdout.contains("sampled columns: 0,3,4"), "{stdout}");
    let mask = read_field(dir.path().join("m.fld")).unwrap().to_mask().unwrap();
    assert_eq!(mask.sampled_columns(), vec![0, 3, 4]);
}

#[test]
fn recon_zero_decode_matches_zero_filled() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), SMALL).unwrap();
    ok(&somamba(
        dir.path(),
        &["--out-dir", "out", "recon", "--config", "run.json", "--zero-decode"],
    ));
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["psnr"].as_f64().unwrap(), metrics["zero_filled_psnr"].as_f64().unwrap());
    assert_eq!(metrics["units"], 2);
    let x = read_field(dir.path().join("out/x_hat.fld")).unwrap();
    let zf = read_field(dir.path().join("out/zero_filled.fld")).unwrap();
    assert_eq!(x, zf);
}

#[test]
fn file_pipeline_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&somamba(d, &["--out-dir", "data", "phantom", "--size", "32"]));
    ok(&somamba(
        d,
        &["--out-dir", "data", "mask", "--width", "32", "--af", "4", "--center-frac", "0.125"],
    ));
    ok(&somamba(
        d,
        &[
            "--out-dir",
            "data",
            "simulate",
            "--image",
            "data/phantom.fld",
            "--mask",
            "data/mask.fld",
            "--coils",
            "2",
        ],
    ));
    std::fs::write(d.join("run.json"), SMALL).unwrap();
    ok(&somamba(
        d,
        &[
            "--out-dir",
            "rec",
            "recon",
            "--config",
            "run.json",
            "--kspace",
            "data/kspace.fld",
            "--mask",
            "data/mask.fld",
            "--truth",
            "data/phantom.fld",
        ],
    ));
    assert_eq!(read_field(d.join("rec/kspace_hat.fld")).unwrap().channels, 2);
    let stdout = ok(&somamba(
        d,
        &["--out-dir", "diag", "diagnose", "--probes", "rec/probes", "--cutoffs", "0.25,0.35"],
    ));
    assert_eq!(stdout.lines().count(), 3);
    let csv = std::fs::read_to_string(d.join("diag/report.csv")).unwrap();
    assert!(csv.starts_with("case,variant,r,hleak,rleak,eta\n"));
    let json: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(d.join("diag/report.json")).unwrap()).unwrap();
    assert_eq!(json.len(), 2);
}

#[test]
fn ablate_emits_eight_variants_per_cutoff_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), SMALL).unwrap();
    ok(&somamba(dir.path(), &["--out-dir", "a", "ablate", "--config", "run.json"]));
    ok(&somamba(
        dir.path(),
        &["--out-dir", "b", "ablate", "--config", "run.json", "--parallel"],
    ));
    let csv = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    for r in ["0.25", "0.35"] {
        let variants: Vec<&str> = csv
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(2) == Some(r))
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(
            variants,
            [
                "mamba_regularizer",
                "sor_router",
                "no_state_access",
                "no_output_outlet",
                "content_residency",
                "so_mamba",
                "tied_a_delta",
                "tied_b_c"
            ]
        );
    }
    for f in ["report.csv", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn recon_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), SMALL).unwrap();
    ok(&somamba(
        dir.path(),
        &["--out-dir", "a", "recon", "--config", "run.json", "--save-weights", "w.bin"],
    ));
    ok(&somamba(
        dir.path(),
        &["--out-dir", "b", "recon", "--config", "run.json", "--weights", "w.bin"],
    ));
    for f in ["x_hat.fld", "kspace_hat.fld", "metrics.json", "probes/unit_001_readout.fld"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn env_var_sets_default_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_somamba"))
        .current_dir(dir.path())
        .env("SOMAMBA_OUT_DIR", "from_env")
        .args(["phantom", "--size", "32"])
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from_env/phantom.fld").exists());
}

#[test]
fn errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"model": {"switches": {"use_sorr": true}}}"#).unwrap();
    let out = somamba(dir.path(), &["recon", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.switches"), "{err}");

    let out = somamba(dir.path(), &["recon", "--kspace", "missing.fld", "--mask", "missing.fld"]);
    assert_eq!(out.status.code(), Some(5));

    std::fs::write(dir.path().join("junk.fld"), b"not a field").unwrap();
    let out = somamba(dir.path(), &["simulate", "--image", "junk.fld", "--mask", "junk.fld"]);
    assert_eq!(out.status.code(), Some(4));

    let out = somamba(dir.path(), &["phantom", "--size", "31"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn selftest_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&somamba(dir.path(), &["selftest"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 10, "{stdout}");
}
