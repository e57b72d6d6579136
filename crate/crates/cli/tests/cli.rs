use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.json")
}

fn ccs(out: &Path, args: &[&str]) -> Output {
    let tiny = tiny();
    Command::new(env!("CARGO_BIN_EXE_ccs"))
        .arg("--config")
        .arg(&tiny)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn ccs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = ccs(out, args);
    assert!(
        o.status.success(),
        "ccs {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read_ccs(path: &Path) -> (Vec<usize>, Vec<f64>) {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[..4], b"CCS1");
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let data = bytes[12 + 8 * ndim..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    (dims, data)
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["run"]);
    ok(out, &["train"]);
    ok(out, &["reconstruct", "--target", "O"]);
    for name in [
        "config.json",
        "masks.ccs",
        "masks.ccs.json",
        "measurements.ccs",
        "labels.csv",
        "scalograms.ccs",
        "model.ccs",
        "model.ccs.json",
        "history.csv",
        "loss.png",
        "confusion_fold0.csv",
        "confusion_fold4.csv",
        "confusion_avg.csv",
        "confusion_avg.csv.json",
        "confusion_heatmap.png",
        "metrics.csv",
        "summary.md",
        "reconstruction_O.ccs",
        "reconstruction_O.png",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let (dims, _) = read_ccs(&out.join("scalograms.ccs"));
    assert_eq!(dims, vec![50, 16, 16, 3]);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.ccs.json")).unwrap()).unwrap();
    assert_eq!(side["extra"]["blocks"].as_array().unwrap().len(), 6);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["simulate-masks"]);
        ok(d, &["acquire"]);
        ok(d, &["cwt"]);
        ok(d, &["train"]);
    }
    for name in ["masks.ccs", "measurements.ccs", "scalograms.ccs", "model.ccs", "history.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["--seed", "99", "simulate-masks"]);
    ok(c.path(), &["--seed", "99", "acquire"]);
    assert_ne!(
        std::fs::read(a.path().join("measurements.ccs")).unwrap(),
        std::fs::read(c.path().join("measurements.ccs")).unwrap()
    );
}

#[test]
fn mismatched_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["simulate-masks"]);
    let o = ccs(out, &["--seed", "12345", "acquire"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("masks.ccs.json")).unwrap()).unwrap();
    assert!(err.contains(side["config_hash"].as_str().unwrap()), "{err}");
}

#[test]
fn missing_upstream_artifact_fails_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccs(dir.path(), &["cwt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"version": 1, "no_such_key": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ccs"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("simulate-masks")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn frames_override_sets_stack_depth() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--frames", "4", "simulate-masks"]);
    let (dims, _) = read_ccs(&dir.path().join("masks.ccs"));
    assert_eq!(dims, vec![4, 1024]);
}

#[test]
fn flat_surface_masks_are_uniform() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--frames", "3", "--debug-flat-surface", "simulate-masks"]);
    let (_, data) = read_ccs(&dir.path().join("masks.ccs"));
    assert!(data.iter().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn opaque_target_reads_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--frames", "8", "simulate-masks"]);
    ok(dir.path(), &["--frames", "8", "acquire", "--target", "opaque"]);
    let text = std::fs::read_to_string(dir.path().join("series_opaque.csv")).unwrap();
    let values: Vec<f64> = text.lines().filter_map(|l| l.trim().parse().ok()).collect();
    assert_eq!(values.len(), 8);
    assert!(values.iter().all(|&v| v == 0.0));
}

#[test]
fn report_on_identity_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("eye.csv");
    let mut text = String::from("actual\\predicted,F,H,I,O,T\n");
    for (i, l) in ["F", "H", "I", "O", "T"].iter().enumerate() {
        let row: Vec<&str> = (0..5).map(|j| if i == j { "20" } else { "0" }).collect();
        text.push_str(&format!("{l},{}\n", row.join(",")));
    }
    std::fs::write(&fixture, text).unwrap();
    ok(dir.path(), &["report", "--confusion", fixture.to_str().unwrap()]);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for l in ["F", "H", "I", "O", "T"] {
        assert!(metrics.contains(&format!("{l},1.0000,1.0000,1.0000,1.0000")), "{metrics}");
    }
    assert!(dir.path().join("confusion_heatmap.png").exists());
}
