use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tseg::checkpoint::Checkpoint;
use tseg::pnm;

fn tseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tseg")).args(args).output().expect("spawn tseg")
}

fn ok(args: &[&str]) -> String {
    let out = tseg(args);
    assert!(
        out.status.success(),
        "tseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: [&str; 6] = ["--set", "total_iters=3", "--set", "batch_size=2", "--set", "seed=4"];

fn train_tiny(out: &Path) {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(TINY);
    ok(&args);
}

#[test]
fn gradcheck_passes() {
    let out = tseg(&["gradcheck", "--points", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all 7 pipelines passed"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(tseg(&["train", "--out", out, "--set", "colour=red"]).status.code(), Some(2));
    assert_eq!(tseg(&["train", "--out", out, "--set", "batch_size=0"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nseed = 2\n").unwrap();
    let out = tseg(&["train", "--out", out, "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(tseg(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn train_then_eval_shares_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_tiny(&run);
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["iterations"], 3);
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);

    let ck = Checkpoint::load(&run.join("model.ckpt")).unwrap();
    assert_eq!(ck.iteration().unwrap(), 3);

    let eval = dir.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--scenes",
        "3",
        "--eval-seed",
        "77",
        "--out",
        eval.to_str().unwrap(),
    ]);
    let report = json(&eval.join("report.json"));
    assert_eq!(report["config_hash"], Value::String(ck.config_hash().unwrap()));
    assert_eq!(report["config_hash"], manifest["config_hash"]);
    assert_eq!(report["eval_seed"], 77);
    assert_eq!(report["train_seed"], 4);
    let pairs = report["pairs"].as_u64().unwrap() as usize;
    assert_eq!(report["records"].as_array().unwrap().len(), pairs);
    let masks = std::fs::read_dir(eval.join("masks")).unwrap().count();
    assert_eq!(masks, pairs);
    let miou = report["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));
}

#[test]
fn fixed_seed_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    train_tiny(&dir.path().join("a"));
    train_tiny(&dir.path().join("b"));
    for file in ["model.ckpt", "losses.csv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn gen_data_writes_manifest_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&["gen-data", "--split", "heldout", "--count", "3", "--out", out.to_str().unwrap()]);
    let manifest = json(&out.join("manifest.json"));
    let scenes = manifest["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 3);
    for s in scenes {
        let bytes = std::fs::read(out.join(s["image"].as_str().unwrap())).unwrap();
        let (channels, h, w, _) = pnm::decode(&bytes).unwrap();
        assert_eq!((channels, h, w), (3, 64, 64));
        for e in s["expressions"].as_array().unwrap() {
            let bytes = std::fs::read(out.join(e["mask"].as_str().unwrap())).unwrap();
            assert_eq!(pnm::decode(&bytes).unwrap().0, 1);
        }
    }
}

#[test]
fn segment_flags_absent_expressions_with_empty_masks() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_tiny(&run);
    let data = dir.path().join("data");
    ok(&["gen-data", "--count", "1", "--out", data.to_str().unwrap()]);
    let out = dir.path().join("seg");
    let exprs = ["red thing", "blue thing", "large green circle", "small white triangle", "square"];
    let mut args = vec![
        "segment",
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--image",
        data.join("scene_00000.ppm").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    for e in exprs {
        args.push("--expr".into());
        args.push(e.into());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);

    let report = json(&out.join("segment.json"));
    let entries = report["expressions"].as_array().unwrap();
    assert_eq!(entries.len(), exprs.len());
    for e in entries {
        let z = e["score"].as_f64().unwrap();
        let absent = e["absent"].as_bool().unwrap();
        assert_eq!(absent, z < 0.0);
        let bytes = std::fs::read(out.join(e["mask"].as_str().unwrap())).unwrap();
        let (_, _, _, px) = pnm::decode(&bytes).unwrap();
        let area = px.iter().filter(|&&v| v == 255).count();
        assert_eq!(area as u64, e["area"].as_u64().unwrap());
        if absent {
            assert_eq!(area, 0);
        }
    }
}

#[test]
fn segment_rejects_unknown_words() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_tiny(&run);
    let data = dir.path().join("data");
    ok(&["gen-data", "--count", "1", "--out", data.to_str().unwrap()]);
    let out = tseg(&[
        "segment",
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--image",
        data.join("scene_00000.ppm").to_str().unwrap(),
        "--expr",
        "purple hexagon",
        "--out",
        dir.path().join("seg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_prints_one_row_per_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let json_out = dir.path().join("compare.json");
    let stdout = ok(&[
        "compare",
        "--seeds",
        "0",
        "--set",
        "total_iters=2",
        "--set",
        "batch_size=2",
        "--set",
        "eval_scenes=2",
        "--out",
        json_out.to_str().unwrap(),
    ]);
    for name in ["GMP", "GAP", "SPA", "MPA"] {
        assert_eq!(stdout.lines().filter(|l| l.starts_with(name)).count(), 1, "{stdout}");
    }
    let v = json(&json_out);
    assert_eq!(v["miou"].as_object().unwrap().len(), 4);
}
