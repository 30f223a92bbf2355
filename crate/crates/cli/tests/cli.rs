use std::path::Path;
use std::process::{Command, Output};

use leafscan::imaging::save_mask_png;
use leafscan::morphology::Mask;

fn leafscan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafscan"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, out: &str) {
    let o = leafscan(
        dir,
        &[
            "synth",
            "--n",
            "2",
            "--holdout",
            "0",
            "--seed",
            "4",
            "--genotypes",
            "0",
            "--out",
            out,
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = leafscan(
        dir.path(),
        &[
            "extract-traits",
            "--images",
            "nope",
            "--leaf-masks",
            "nope",
            "--vein-masks",
            "nope",
            "--out",
            "t",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_values_and_config_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        leafscan(dir.path(), &["synth", "--n", "many", "--out", "s"])
            .status
            .code(),
        Some(3)
    );
    std::fs::write(dir.path().join("run.cfg"), "n 3\n").unwrap();
    let o = leafscan(dir.path(), &["synth", "--config", "run.cfg", "--out", "s"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn model_version_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s");
    let mut bytes = b"LTNN".to_vec();
    bytes.extend_from_slice(&99u32.to_le_bytes());
    std::fs::write(dir.path().join("future.ltnn"), bytes).unwrap();
    let o = leafscan(
        dir.path(),
        &[
            "segment-leaf",
            "--images",
            "s/train/images",
            "--model",
            "future.ltnn",
            "--out",
            "l",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn unusable_images_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s");
    let blank = dir.path().join("s/train/leaf_masks/leaf_001.png");
    save_mask_png(&Mask::new(512, 512), &blank).unwrap();
    let o = leafscan(
        dir.path(),
        &[
            "extract-traits",
            "--images",
            "s/train/images",
            "--leaf-masks",
            "s/train/leaf_masks",
            "--vein-masks",
            "s/train/vein_masks",
            "--out",
            "t",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("processed 1 of 2 images, 1 skipped"),
        "{stdout}"
    );
    let skipped = std::fs::read_to_string(dir.path().join("t/skipped.csv")).unwrap();
    assert!(skipped.contains("leaf_001"), "{skipped}");
    let traits = std::fs::read_to_string(dir.path().join("t/traits.csv")).unwrap();
    assert_eq!(traits.lines().count(), 2);
}

#[test]
fn manifest_repeats_the_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a");
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.starts_with("# leafscan "));
    assert!(manifest.contains("seed=4\n"));
    let o = leafscan(
        dir.path(),
        &["synth", "--config", "a/manifest.txt", "--out", "b"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "train/images/leaf_000.png",
        "train/vein_masks/leaf_001.png",
        "petioles.csv",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    let rerun = std::fs::read_to_string(dir.path().join("b/manifest.txt")).unwrap();
    assert_eq!(rerun.replace("out=b", "out=a"), manifest);
}
