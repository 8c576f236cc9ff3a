//! Drives the `curvedraw` binary end to end on a synthetic cube.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn curvedraw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvedraw")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A temp dir holding a synthetic cube dataset and a config reading it.
fn cube_workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(curvedraw(&["synth", "--preset", "cube", "--seed", "7", "--out", s(&dir.path().join("data"))]));
    fs::write(
        dir.path().join("run.toml"),
        "[input]\ndata_dir = \"data\"\nground_truth = \"data/gt.curves3d\"\n",
    )
    .unwrap();
    dir
}

#[test]
fn synth_then_run_matches_in_memory_scene_and_thread_count() {
    let ws = cube_workspace();
    let root = ws.path();
    fs::write(root.join("scene_run.toml"), "[input]\nscene = \"data/scene.toml\"\n").unwrap();

    let from_files = root.join("files");
    let stdout = ok(curvedraw(&["run", s(&root.join("run.toml")), "--out", s(&from_files), "--threads", "1"]));
    assert!(stdout.contains("12 links"), "{stdout}");
    let from_scene = root.join("scene");
    ok(curvedraw(&["run", "--config", s(&root.join("scene_run.toml")), "--out", s(&from_scene), "--threads", "8"]));

    for name in ["drawing.graph", "drawing.ply"] {
        let a = fs::read(from_files.join(name)).unwrap();
        let b = fs::read(from_scene.join(name)).unwrap();
        assert!(a == b, "{name} differs between file-based/1-thread and in-memory/8-thread runs");
    }
    let log = fs::read_to_string(from_files.join("run.log")).unwrap();
    assert!(log.contains("config_sha256 "));
    assert!(log.contains("stage hypotheses count "));
    assert!(log.contains("stage drawing count 12 "));
    assert!(log.contains("precision 1 recall 1"), "{log}");
    let scene_log = fs::read_to_string(from_scene.join("run.log")).unwrap();
    assert!(scene_log.starts_with("seed 7\n"), "{scene_log}");
}

#[test]
fn eval_export_and_staged_runs() {
    let ws = cube_workspace();
    let root = ws.path();
    let out = root.join("out");
    let ck = root.join("ck");
    ok(curvedraw(&["run", s(&root.join("run.toml")), "--out", s(&out), "--checkpoint", s(&ck)]));
    for name in ["hypotheses.txt", "verified.curves3d", "fused.curves3d", "mccn.txt", "drawing.graph"] {
        assert!(ck.join(name).exists(), "missing checkpoint {name}");
    }

    let graph = out.join("drawing.graph");
    let line = ok(curvedraw(&["eval", "--recon", s(&graph), "--gt", s(&root.join("data/gt.curves3d")), "--tau-prox", "0.01"]));
    assert!(line.starts_with("precision 1 recall 1 "), "{line}");
    assert!(line.trim_end().ends_with("tau_prox 0.01"), "{line}");
    // A 3D curve file is accepted as a reconstruction too.
    let line = ok(curvedraw(&["eval", "--recon", s(&ck.join("fused.curves3d")), "--gt", s(&root.join("data/gt.curves3d"))]));
    assert!(line.starts_with("precision "), "{line}");

    let ply = root.join("copy.ply");
    ok(curvedraw(&["export-ply", "--recon", s(&graph), "--out", s(&ply)]));
    assert_eq!(fs::read(&ply).unwrap(), fs::read(out.join("drawing.ply")).unwrap());

    let staged = root.join("staged");
    let staged_ck = root.join("staged_ck");
    let stdout = ok(curvedraw(&[
        "run",
        s(&root.join("run.toml")),
        "--out",
        s(&staged),
        "--checkpoint",
        s(&staged_ck),
        "--stage",
        "verify",
    ]));
    assert!(stdout.contains("stopped after stage verify"), "{stdout}");
    assert!(staged_ck.join("verified.curves3d").exists());
    assert!(!staged_ck.join("fused.curves3d").exists());
    assert!(!staged.join("drawing.graph").exists());
    let log = fs::read_to_string(staged.join("run.log")).unwrap();
    assert!(log.contains("stage verify count ") && !log.contains("stage fuse"), "{log}");
}

#[test]
fn sweep_prints_a_csv_table() {
    let ws = cube_workspace();
    let root = ws.path();
    let csv_path = root.join("pr.csv");
    let csv = ok(curvedraw(&["sweep", s(&root.join("run.toml")), "--values", "2,6", "--out", s(&csv_path)]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,precision,recall,tp,fp,fn");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("n_min_views=2,"));
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), csv);
}

#[test]
fn failures_name_the_stage_and_file() {
    let ws = cube_workspace();
    let root = ws.path();
    fs::remove_file(root.join("data/cameras.txt")).unwrap();
    let out = curvedraw(&["run", s(&root.join("run.toml")), "--out", s(&root.join("out"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage load") && err.contains("cameras.txt"), "{err}");

    let missing = curvedraw(&["run", s(&root.join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.toml"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(curvedraw(&["run", "x.toml", "--stage", "bogus"]).status.code(), Some(2));
    assert_eq!(curvedraw(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(curvedraw(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(curvedraw(&["eval", "--recon", "a"]).status.code(), Some(2));
}
