mod common;

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use common::{motionbank, ok, tiny_config, trained_model, write_config};
use motionbank_core::checkpoint;

fn shared_model() -> &'static PathBuf {
    static M: OnceLock<PathBuf> = OnceLock::new();
    M.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        trained_model(&dir, 6, 3)
    })
}

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

fn pngs(dir: &std::path::Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_writes_requested_frames() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("v");
    ok(&["generate", "--model", s(shared_model()), "--seed", "7", "--len", "16", "--out", s(&dir)]);
    let frames = pngs(&dir);
    assert_eq!(frames.len(), 16);
    assert!(frames[0].ends_with("frame_00000.png"));
    let alphas: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(dir.join("alphas.json")).unwrap()).unwrap();
    assert_eq!(alphas.len(), 15);
    assert!(alphas.iter().all(|r| r.len() == 6 && r.iter().all(|a| a.is_finite())));
}

#[test]
fn generate_is_reproducible_and_static_when_all_off() {
    let out = tempfile::tempdir().unwrap();
    let m = shared_model();
    for name in ["a", "b"] {
        ok(&["generate", "--model", s(m), "--seed", "3", "--len", "6", "--out", s(&out.path().join(name))]);
    }
    let a = pngs(&out.path().join("a"));
    let b = pngs(&out.path().join("b"));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }

    let still = out.path().join("still");
    ok(&["generate", "--model", s(m), "--seed", "3", "--len", "6", "--static-video", "--out", s(&still)]);
    let frames = pngs(&still);
    let first = fs::read(&frames[0]).unwrap();
    assert!(frames.iter().all(|f| fs::read(f).unwrap() == first));
    assert_ne!(fs::read(&a[0]).unwrap(), fs::read(&a[5]).unwrap());
}

#[test]
fn gif_output() {
    let out = tempfile::tempdir().unwrap();
    ok(&["generate", "--model", s(shared_model()), "--seed", "1", "--len", "5", "--format", "gif", "--out", s(out.path())]);
    let bytes = fs::read(out.path().join("video.gif")).unwrap();
    assert_eq!(&bytes[..6], b"GIF89a");
}

#[test]
fn deactivation_study_writes_two_by_four_table() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path(), 512, 1);
    let out = dir.path().join("study");
    let o = ok(&["deactivation-study", "--model", s(&model), "--dims", "1,511", "--n", "100", "--out", s(&out)]);
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["direction"], 1);
    assert_eq!(rows[1]["direction"], 511);
    for r in rows {
        assert_eq!(r["delta"].as_array().unwrap().len(), 4);
        assert_eq!(r["phi"].as_array().unwrap().len(), 4);
    }
    assert_eq!(table["videos"], 100);
    let text = fs::read_to_string(out.with_extension("txt")).unwrap();
    assert_eq!(text, String::from_utf8(o.stdout).unwrap());
    assert!(text.lines().any(|l| l.trim_start().starts_with("d511")));

    let bad = motionbank(&["deactivation-study", "--model", s(&model), "--dims", "512", "--n", "2", "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("512"));
}

#[test]
fn train_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(6));
    let run = dir.path().join("run");
    let args = |steps: &'static str| ["train", "--config", s(&cfg), "--out", s(&run), "--steps", steps].map(str::to_string);
    let first = args("10");
    ok(&first.each_ref().map(String::as_str));
    let ckpt = run.join("model.ckpt");
    assert_eq!(checkpoint::peek(&ckpt).unwrap().0, 10);

    let second = args("4");
    let o = ok(&second.each_ref().map(String::as_str));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["step"], 14);
    assert_eq!(checkpoint::peek(&ckpt).unwrap().0, 14);

    let steps: Vec<u64> = fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![5, 10, 14]);

    let saved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert_eq!(motionbank_core::ExperimentConfig::from_toml(&saved).unwrap(), tiny_config(6));

    // an uninterrupted 14-step run lands on the same weights
    let fresh = dir.path().join("fresh");
    ok(&["train", "--config", s(&cfg), "--out", s(&fresh), "--steps", "14"]);
    let a = checkpoint::load_generator(&ckpt).unwrap().1;
    let b = checkpoint::load_generator(&fresh.join("model.ckpt")).unwrap().1;
    let req = motionbank_core::experiment::GenerateRequest::new(4, 5, 4);
    assert_eq!(req.run(&a).unwrap().video, req.run(&b).unwrap().video);
}

#[test]
fn bad_flags_exit_nonzero_with_usage() {
    let o = motionbank(&["generate", "--seed", "x"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");

    let o = motionbank(&["no-such-command"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn failures_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let o = motionbank(&["generate", "--model", s(&missing), "--seed", "1", "--len", "4", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nope.ckpt"), "{err}");

    let garbage = dir.path().join("junk.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = motionbank(&["alpha-stats", "--model", s(&garbage)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.ckpt"));
}

#[test]
fn alpha_stats_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("alpha.json");
    ok(&["alpha-stats", "--model", s(shared_model()), "--n", "20", "--top", "3", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let top = v["top_directions"].as_array().unwrap();
    assert_eq!(top.len(), 3);
    let var: Vec<f64> = top.iter().map(|d| d["variance"].as_f64().unwrap()).collect();
    assert!(var.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["samples"], 20);
}

#[test]
fn flow_eval_from_model_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let m = shared_model();
    let out = dir.path().join("flow");
    ok(&["flow-eval", "--model", s(m), "--seed", "2", "--len", "5", "--out", s(&out)]);
    for p in 0..4 {
        let flo = fs::read(out.join(format!("pair_{p:04}.flo"))).unwrap();
        assert_eq!(&flo[..4], b"PIEH");
        assert_eq!(flo.len(), 12 + 8 * 8 * 8);
    }
    let q: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("quantization.json")).unwrap()).unwrap();
    assert_eq!(q["phi"].as_array().unwrap().len(), 4);

    // the same video read back from 8-bit PNGs lands close
    let frames = dir.path().join("frames");
    ok(&["generate", "--model", s(m), "--seed", "2", "--len", "5", "--out", s(&frames)]);
    let out2 = dir.path().join("flow2");
    ok(&["flow-eval", "--input", s(&frames), "--h-norm", &q["h_norm"].to_string(), "--out", s(&out2)]);
    let q2: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("quantization.json")).unwrap()).unwrap();
    for (a, b) in q["phi"].as_array().unwrap().iter().zip(q2["phi"].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-2, "{a} vs {b}");
    }
}

#[test]
fn region_study_full_frame_matches_deactivation() {
    let dir = tempfile::tempdir().unwrap();
    let m = shared_model();
    let masks = dir.path().join("masks.json");
    fs::write(&masks, r#"[{"name": "all"}, {"name": "left", "rect": [0, 4, 0, 8]}]"#).unwrap();
    let reg = dir.path().join("region.json");
    let common = ["--model", s(m), "--dims", "0,2", "--n", "6", "--h-norm", "2"];
    let mut a = vec!["region-study", "--masks", s(&masks), "--out", s(&reg)];
    a.extend(common);
    ok(&a);
    let deact = dir.path().join("deact.json");
    let mut b = vec!["deactivation-study", "--out", s(&deact)];
    b.extend(common);
    ok(&b);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&reg).unwrap()).unwrap();
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(&deact).unwrap()).unwrap();
    assert!(dir.path().join("region.txt").exists());
    assert_eq!(r["regions"][0], "all");
    let want: Vec<f64> = d["rows"].as_array().unwrap().iter().map(|x| x["delta_total"].as_f64().unwrap()).collect();
    let got: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|x| x["delta"][0].as_f64().unwrap()).collect();
    assert_eq!(want.len(), 2);
    for (x, y) in want.iter().zip(&got) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn interpolate_and_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("interp");
    ok(&["interpolate", "--model", s(shared_model()), "--from-seed", "1", "--to-seed", "2", "--steps", "3", "--len", "4", "--out", s(&out)]);
    for k in 0..3 {
        assert!(out.join(format!("step_{k:02}/video.gif")).exists());
    }

    let cfg = write_config(dir.path(), &tiny_config(6));
    let tree = dir.path().join("shapes");
    ok(&["make-shapes", "--config", s(&cfg), "--count", "5", "--out", s(&tree)]);
    let packed = dir.path().join("shapes.bin");
    ok(&["make-shapes", "--config", s(&cfg), "--count", "5", "--packed", "--out", s(&packed)]);
    let ic = motionbank_core::data::IngestConfig {
        clip_length: 4,
        resolution: 8,
    };
    let a = motionbank_core::data::ingest(&tree, &ic).unwrap();
    let b = motionbank_core::data::ingest(&packed, &ic).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
}

#[test]
fn fid_command_reports_a_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fid.json");
    ok(&["fid", "--model", s(shared_model()), "--n", "8", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let f = v["fid"].as_f64().unwrap();
    assert!(f.is_finite() && f >= -1e-9);
}
