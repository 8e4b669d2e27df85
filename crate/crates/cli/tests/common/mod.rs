#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motionbank_core::{ExperimentConfig, GeneratorConfig, TemporalPyramidConfig};

/// 8 px model small enough for per-test training and serving.
pub fn tiny_config(n: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::cpu();
    c.generator = GeneratorConfig {
        dim_za: 6,
        dim_zm: 5,
        n,
        video_length: 4,
        resolution: 8,
        mlp_depth: 1,
        channels: vec![8],
        ..GeneratorConfig::default()
    };
    c.pyramid = TemporalPyramidConfig::new(vec![1, 3]);
    c.train.batch_size = 4;
    c.train.r1_interval = 2;
    c.train.log_every = 5;
    c.train.total_steps = 4;
    c.data.count = 16;
    c.data.shapes.canvas = 8;
    c.data.shapes.size = [1.5, 2.0];
    c.data.shapes.speed = [0.5, 1.0];
    c.data.shapes.frames = 6;
    c.eval.num_samples = 40;
    c.eval.fid_samples = 8;
    c.eval.extractor = motionbank_core::config::ExtractorKind::Random;
    c.serve.max_length = 64;
    c
}

pub fn write_config(dir: &Path, c: &ExperimentConfig) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

pub fn motionbank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motionbank"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn motionbank")
}

pub fn ok(args: &[&str]) -> Output {
    let out = motionbank(args);
    assert!(
        out.status.success(),
        "motionbank {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Trains `steps` steps into `dir/run` and returns the checkpoint path.
pub fn trained_model(dir: &Path, n: usize, steps: u64) -> PathBuf {
    let cfg = write_config(dir, &tiny_config(n));
    let run = dir.join("run");
    ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--steps",
        &steps.to_string(),
    ]);
    run.join("model.ckpt")
}
