use std::fs;
use std::path::Path;
use std::process::Command;

use nvas::checkpoint;
use nvas::experiments::read_rows_csv;

fn nvas(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_nvas")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenes = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let data = d.join("data");
    nvas(&["gen-data", "--scenes", p(&scenes), "--out", p(&data), "--seed", "3", "--clips", "10"]);

    let ckpt = d.join("model.pfck");
    nvas(&["train", "--data", p(&data), "--features", "rgb,sem", "--seed", "1", "--out", p(&ckpt), "--steps", "10"]);
    assert!(d.join("model.pfck.log.csv").is_file());
    let (cfg, model) = checkpoint::load(&ckpt).unwrap();
    assert_eq!(cfg.features.to_string(), "rgb,sem");
    let again = d.join("again.pfck");
    checkpoint::save(&again, &cfg, &model).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    let report = d.join("eval.csv");
    let per_clip = d.join("clips.csv");
    nvas(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--split", "val", "--report", p(&report), "--per-clip", p(&per_clip)]);
    let rows = read_rows_csv(&report).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].n_clips, 2);
    assert!(d.join("eval.json").is_file());
    assert_eq!(fs::read_to_string(&per_clip).unwrap().lines().count(), 3);

    let base = d.join("base.csv");
    nvas(&["baselines", "--data", p(&data), "--out", p(&base)]);
    assert_eq!(read_rows_csv(&base).unwrap().len(), 3);

    let plots = d.join("plots");
    let id = fs::read_dir(data.join("clips")).unwrap().next().unwrap().unwrap().file_name();
    let listed = nvas(&["plot", "--ckpt", p(&ckpt), "--data", p(&data), "--clips", id.to_str().unwrap(), "--out", p(&plots)]);
    assert_eq!(listed.lines().count(), 2);

    assert!(nvas(&["config", "--kind", "train"]).contains("train.steps"));
    assert!(nvas(&["config", "--kind", "gen"]).contains("sim.max_order"));
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_nvas")).args(args).output().unwrap().status.success();
    assert!(!status(&["train", "--data", p(&dir.path().join("missing")), "--out", "x.pfck"]));
    assert!(!status(&["config", "--kind", "other"]));
    assert!(!status(&["eval"]));
}
