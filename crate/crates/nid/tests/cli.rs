use std::path::Path;
use std::process::Command;

const TINY: &[&str] = &[
    "n=8",
    "k=2",
    "n_freq=8",
    "width=16",
    "layers=2",
    "head_width=8",
    "epochs=4",
    "warmup_epochs=2",
    "count=4",
    "holdout=2",
    "size=8",
    "adapt_steps=5",
    "omega0=10",
];

fn nid(args: &[&str], sets: &[&str]) -> (i32, String, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nid"));
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_adapt_writes_outputs_and_resolved_configs() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let (code, _, err) = nid(&["train", "images", "--out", path(&train)], TINY);
    assert_eq!(code, 0, "{err}");
    for f in ["model.nidc", "train_log.csv", "metrics.csv", "config.resolved.json"] {
        assert!(train.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(train.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    let adapt = dir.path().join("adapt");
    let model = train.join("model.nidc");
    let (code, _, err) = nid(&["adapt", "--model", path(&model), "--out", path(&adapt)], TINY);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(adapt.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("instance,final_loss,psnr,ssim"));
    assert_eq!(csv.lines().count(), 1 + 2 + 1);

    // the resolved config alone reproduces the run
    let again = dir.path().join("again");
    let cfg = train.join("config.resolved.json");
    let (code, _, err) = nid(
        &["train", "images", "--config", path(&cfg), "--out", path(&again)],
        &[],
    );
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        std::fs::read(train.join("model.nidc")).unwrap(),
        std::fs::read(again.join("model.nidc")).unwrap()
    );
}

#[test]
fn metrics_prints_psnr_and_ssim() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = nid(&["gen-data", "blobs", "--out", path(dir.path())], TINY);
    assert_eq!(code, 0, "{err}");
    let a = dir.path().join("blob_0000.ppm");
    let (code, out, err) = nid(&["metrics", "--pred", path(&a), "--ref", path(&a)], &[]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().next(), Some("instance,psnr,ssim"));
    assert!(out.contains("0,99,1"), "{out}");
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = nid(&["train", "images", "--out", path(dir.path())], &["nonsense=1"]);
    assert_eq!(code, 2);
    assert!(err.contains("nonsense"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(nid(&["frobnicate"], &[]).0, 2);
    assert_eq!(nid(&["train", "images", "--bogus-flag"], &[]).0, 2);
}

#[test]
fn runtime_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.nidc");
    let (code, _, _) = nid(
        &["adapt", "--model", path(&missing), "--out", path(dir.path())],
        &[],
    );
    assert_eq!(code, 3);
}
