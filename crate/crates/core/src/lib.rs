//! Video generation with a learned orthonormal motion dictionary.

pub mod bank;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod interpret;
pub mod latent;
pub mod nn;
pub mod noise;
pub mod training;
pub mod video;

pub use motionbank_tensor as tensor;

pub use bank::{canonical_svd, MotionBank, Svd};
pub use config::{DataConfig, EvalConfig, ExperimentConfig, ExtractorKind, ServeConfig};
pub use data::{ClipDataset, ClipMeta, MotionFactor, ShapeKind, ShapesSpec};
pub use discriminator::{Discriminator, TemporalPyramidConfig};
pub use error::{Error, Result};
pub use generator::{BatchNoise, GeneratedVideo, Generator, GeneratorConfig, NoiseBundle};
pub use latent::{
    apply_controls, apply_direction_mask, inject_trajectory, lmd_sequence, lmd_step, DirectionMask, LatentCode,
    MagnitudeSequence, MotionDictionary, Trajectory, TrajectorySpec,
};
pub use training::{StepReport, TrainConfig, Trainer};
pub use video::{Frame, VideoTensor};
