//! Command-line behavior: outputs, determinism, config precedence and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use sat_core::data::{generate_scene, write_cloud, PointCloud, SceneSpec};

fn sat() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sat"));
    c.env_remove("SAT_SEED");
    c
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gen(dir: &Path, scenes: &str, seed: &str) -> String {
    ok(sat().args(["gen", "--scenes", scenes, "--points", "600", "--seed", seed, "--out"]).arg(dir))
}

fn quick_train(data: &Path, out: &Path, extra: &[&str]) -> String {
    ok(sat()
        .args(["train", "--epochs", "2", "--max-points", "300", "--data"])
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(extra))
}

#[test]
fn gen_is_deterministic_and_manifest_matches_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let manifest = gen(&a, "5", "7");
    gen(&b, "5", "7");
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("val,")).count(), 1);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        let text = std::fs::read_to_string(a.join(f[1])).unwrap();
        assert_eq!(text.lines().count() - 1, f[2].parse::<usize>().unwrap());
        assert_eq!(text, std::fs::read_to_string(b.join(f[1])).unwrap());
    }
    assert_eq!(manifest, std::fs::read_to_string(a.join("manifest.csv")).unwrap());
    let other = tmp.path().join("c");
    gen(&other, "5", "8");
    assert_ne!(
        std::fs::read(a.join("train/scene_0000.satpc")).unwrap(),
        std::fs::read(other.join("train/scene_0000.satpc")).unwrap()
    );
}

#[test]
fn seed_precedence_flag_config_env() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = |d: &str| std::fs::read(tmp.path().join(d).join("train/scene_0000.satpc")).unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "# generated\nscenes = 1\nval_fraction = 0\npoints = 500\nseed = 3\n").unwrap();
    ok(sat().arg("gen").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("cfg")));
    ok(sat().args(["gen", "--seed", "3", "--scenes", "1", "--val-fraction", "0", "--points", "500", "--out"]).arg(tmp.path().join("flag")));
    assert_eq!(scene("cfg"), scene("flag"));

    ok(sat().env("SAT_SEED", "3").args(["gen", "--scenes", "1", "--val-fraction", "0", "--points", "500", "--out"]).arg(tmp.path().join("env")));
    assert_eq!(scene("env"), scene("flag"));

    // The flag beats the file.
    ok(sat().arg("gen").arg("--config").arg(&cfg).args(["--seed", "4", "--out"]).arg(tmp.path().join("over")));
    assert_ne!(scene("over"), scene("flag"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sat().args(["gen", "--scenes", "2"]).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("out"));
    assert_eq!(code(&sat().args(["frobnicate"]).output().unwrap()), 2);
    assert_eq!(code(&sat().args(["gen", "--scenes", "x"]).output().unwrap()), 2);

    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    let out = sat().arg("gen").arg("--config").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    gen(&tmp.path().join("d"), "2", "1");
    let out = sat()
        .args(["train", "--variant", "no-gate", "--data"])
        .arg(tmp.path().join("d"))
        .arg("--out")
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = sat()
        .args(["train", "--lr", "-1", "--data"])
        .arg(tmp.path().join("d"))
        .arg("--out")
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sat()
        .args(["eval", "--checkpoint"])
        .arg(tmp.path().join("none.ckpt"))
        .arg("--data")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("none"));
}

#[test]
fn train_writes_checkpoints_and_log_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "3", "2");
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    quick_train(&data, &r1, &["--precision", "f64", "--seed", "5"]);
    quick_train(&data, &r2, &["--precision", "f64", "--seed", "5"]);
    for f in ["last.ckpt", "best.ckpt", "model.cfg", "train_log.csv"] {
        assert!(r1.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(r1.join("train_log.csv")).unwrap();
    assert_eq!(log, std::fs::read_to_string(r2.join("train_log.csv")).unwrap());
    assert!(log.starts_with("epoch,steps,lr,loss,train_acc,val_acc,val_miou\n"));
    assert_eq!(log.lines().count(), 3);
    assert_eq!(std::fs::read(r1.join("last.ckpt")).unwrap(), std::fs::read(r2.join("last.ckpt")).unwrap());
}

#[test]
fn train_variant_is_recorded_in_model_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "2", "2");
    let run = tmp.path().join("r");
    let out = quick_train(&data, &run, &["--variant", "no-reattention"]);
    assert!(out.contains("training no-reattention"));
    let cfg = std::fs::read_to_string(run.join("model.cfg")).unwrap();
    assert!(cfg.lines().any(|l| l.replace(' ', "") == "re_attention=false"), "{cfg}");
}

#[test]
fn eval_reports_every_class_plus_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "3", "4");
    quick_train(&data, &tmp.path().join("r"), &[]);
    let csv = tmp.path().join("metrics.csv");
    let out = ok(sat()
        .args(["eval", "--checkpoint"])
        .arg(tmp.path().join("r/last.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&csv));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(out.starts_with(&text));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,iou,acc,population_variance");
    assert_eq!(lines.len(), 1 + 7 + 1);
    assert!(lines[1].starts_with("floor,"));
    assert!(lines[8].starts_with("mean,"));
}

#[test]
fn eval_class_mismatch_names_both_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "2", "4");
    quick_train(&data, &tmp.path().join("r"), &[]);
    let other = tmp.path().join("five");
    std::fs::create_dir_all(other.join("val")).unwrap();
    let c = generate_scene(&SceneSpec::desk(200), 1).unwrap();
    let labels = c.labels.iter().map(|&l| l % 5).collect();
    let five = PointCloud::new(c.coords, c.colors, labels, 5).unwrap();
    write_cloud(&other.join("val/a.satpc"), &five).unwrap();
    let out = sat()
        .args(["eval", "--checkpoint"])
        .arg(tmp.path().join("r/last.ckpt"))
        .arg("--data")
        .arg(&other)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('7') && err.contains('5'), "{err}");
}

#[test]
fn bench_rows_are_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bench.csv");
    ok(sat().args(["bench", "--points", "1000,2000,4000", "--out"]).arg(&csv));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n_points,n_voxels,macs_fine,macs_coarse,macs_baseline,ms_forward");
    assert_eq!(lines.len(), 4);
    let col = |i: usize| -> Vec<u64> { lines[1..].iter().map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect() };
    assert_eq!(col(0), [1000, 2000, 4000]);
    for c in [2, 3, 4] {
        assert!(col(c).windows(2).all(|w| w[0] < w[1]), "column {c}");
    }
}

#[test]
fn inspect_writes_one_file_per_block() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    gen(&data, "2", "6");
    quick_train(&data, &tmp.path().join("r"), &["--preset", "s3dis", "--max-steps", "1"]);
    let out_dir = tmp.path().join("gates");
    let out = ok(sat()
        .args(["inspect", "--checkpoint"])
        .arg(tmp.path().join("r/last.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.starts_with("12 layers, 7 classes"));
    let layers = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("reattention_enc"))
        .count();
    assert_eq!(layers, 12);
    let trend = std::fs::read_to_string(out_dir.join("reattention_trend.csv")).unwrap();
    assert_eq!(trend.lines().count(), 13);
}
