#![allow(dead_code)]

use motionbank_core::data::make_shapes;
use motionbank_core::{ClipDataset, ExperimentConfig, GeneratorConfig, TemporalPyramidConfig};

/// 8 px, 4-frame model that trains in milliseconds per step.
pub fn tiny_experiment(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::cpu();
    c.seed = seed;
    c.generator = GeneratorConfig {
        dim_za: 6,
        dim_zm: 5,
        n: 6,
        video_length: 4,
        resolution: 8,
        mlp_depth: 2,
        channels: vec![8],
        ..GeneratorConfig::default()
    };
    c.pyramid = TemporalPyramidConfig::new(vec![1, 3]);
    c.train.batch_size = 4;
    c.train.r1_interval = 2;
    c.data.count = 16;
    c.data.shapes.canvas = 8;
    c.data.shapes.size = [1.5, 2.0];
    c.data.shapes.speed = [0.5, 1.0];
    c.data.shapes.frames = 6;
    c
}

pub fn tiny_data(c: &ExperimentConfig) -> ClipDataset {
    make_shapes(&c.data.shapes, c.data.count, c.generator.video_length).unwrap()
}
