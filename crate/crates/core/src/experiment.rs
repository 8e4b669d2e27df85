//! Glue shared by the command line, the HTTP service and the end-to-end
//! tests: dataset resolution, the Fréchet probe, the training loop and
//! seed-addressed controlled generation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, ExtractorKind};
use crate::data::{ingest, make_shapes, ClipDataset, IngestConfig};
use crate::error::{Error, Result};
use crate::generator::{GeneratedVideo, Generator, NoiseBundle};
use crate::interpret::extractor::{sample_clips, ClassifierConfig, FeatureExtractor, RandomProjection, ShapeClassifier};
use crate::interpret::frechet::frechet_distance;
use crate::interpret::studies::{eval_bundle, AlphaStats};
use crate::latent::{DirectionMask, TrajectorySpec};
use crate::training::{MetricsLog, StepReport, Trainer};

/// The configured dataset: ingested from `data.path`, or synthetic shapes.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<ClipDataset> {
    let g = &cfg.generator;
    match &cfg.data.path {
        Some(p) => ingest(
            p,
            &IngestConfig {
                clip_length: g.video_length,
                resolution: g.resolution,
            },
        ),
        None => make_shapes(&cfg.data.shapes, cfg.data.count, g.video_length),
    }
}

/// Builds the configured feature extractor. The classifier needs shape
/// metadata on every video.
pub fn build_extractor(cfg: &ExperimentConfig, data: &ClipDataset) -> Result<Box<dyn FeatureExtractor>> {
    match cfg.eval.extractor {
        ExtractorKind::Random => Ok(Box::new(RandomProjection::new(
            cfg.generator.video_length,
            cfg.generator.resolution,
            64,
            cfg.seed ^ 0x5eed,
        )?)),
        ExtractorKind::Classifier => {
            if data.videos.iter().any(|v| v.meta.is_none()) {
                return Err(Error::Config(
                    "the classifier extractor needs shapes metadata; use eval.extractor = \"random\"".into(),
                ));
            }
            let c = ClassifierConfig {
                seed: cfg.seed,
                ..ClassifierConfig::default()
            };
            Ok(Box::new(ShapeClassifier::train(data, &c)?))
        }
    }
}

/// Evaluation set base seed for Fréchet samples.
pub const FID_BASE_SEED: u64 = 999;

/// Fréchet distance between a fixed set of real clips and generated videos
/// from a fixed seed set.
pub struct FidProbe {
    pub extractor: Box<dyn FeatureExtractor>,
    real: Vec<Vec<f64>>,
    pub samples: usize,
}

impl FidProbe {
    pub fn new(extractor: Box<dyn FeatureExtractor>, data: &ClipDataset, samples: usize, seed: u64) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidArgument("Fréchet probe needs at least 2 samples".into()));
        }
        let real = extractor.features_batch(&sample_clips(data, samples, seed))?;
        Ok(FidProbe {
            extractor,
            real,
            samples,
        })
    }

    pub fn score(&self, gen: &Generator<f32>) -> Result<f64> {
        let t = gen.config().video_length;
        let videos = (0..self.samples)
            .map(|i| Ok(gen.generate_video(&eval_bundle(gen, FID_BASE_SEED, i, t)?)?.video))
            .collect::<Result<Vec<_>>>()?;
        let fake = self.extractor.features_batch(&videos)?;
        Ok(frechet_distance(&self.real, &fake)?.distance)
    }
}

/// Periodic side effects of [`train_loop`].
#[derive(Default)]
pub struct LoopHooks<'a> {
    pub metrics: Option<&'a mut MetricsLog>,
    pub fid: Option<(&'a FidProbe, u64)>,
    pub checkpoint: Option<&'a Path>,
    pub on_report: Option<&'a mut dyn FnMut(&StepReport)>,
}

/// Runs until `trainer.step() == until`. Reports are logged every
/// `train.log_every` steps and on the final step.
pub fn train_loop(trainer: &mut Trainer<f32>, data: &ClipDataset, until: u64, mut hooks: LoopHooks) -> Result<()> {
    let log_every = trainer.config.train.log_every.max(1);
    let ckpt_every = trainer.config.train.checkpoint_every;
    while trainer.step() < until {
        let real = trainer.sample_real(data);
        let mut report = trainer.train_step(&real)?;
        let s = report.step;
        if let Some((probe, every)) = hooks.fid {
            if every > 0 && (s % every == 0 || s == until) {
                report.fid_snapshot = Some(probe.score(&trainer.inference_generator()?)?);
            }
        }
        if s % log_every == 0 || s == until || report.fid_snapshot.is_some() {
            if let Some(m) = hooks.metrics.as_deref_mut() {
                m.write(&report)?;
            }
            if let Some(f) = hooks.on_report.as_deref_mut() {
                f(&report);
            }
        }
        if let Some(p) = hooks.checkpoint {
            if (ckpt_every > 0 && s % ckpt_every == 0) || s == until {
                checkpoint::save(trainer, p)?;
            }
        }
    }
    Ok(())
}

/// Seed-addressed generation with optional direction controls. The same
/// request always renders the same video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub appearance_seed: u64,
    pub motion_seed: u64,
    pub length: usize,
    /// Directions left on; every direction when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<Vec<TrajectorySpec>>,
}

impl GenerateRequest {
    pub fn new(appearance_seed: u64, motion_seed: u64, length: usize) -> Self {
        GenerateRequest {
            appearance_seed,
            motion_seed,
            length,
            active_dims: None,
            trajectories: None,
        }
    }

    pub fn run(&self, gen: &Generator<f32>) -> Result<GeneratedVideo> {
        let n = gen.config().n;
        if self.length < 1 {
            return Err(Error::InvalidArgument("length must be >= 1".into()));
        }
        let mask = match &self.active_dims {
            Some(dims) => DirectionMask::only(n, dims)?,
            None => DirectionMask::all(n),
        };
        let trajectories = self
            .trajectories
            .iter()
            .flatten()
            .map(|spec| {
                if spec.dim() >= n {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory direction {} out of range [0, {n})",
                        spec.dim()
                    )));
                }
                spec.realize(self.length - 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let bundle = NoiseBundle::from_seeds(gen.config(), self.appearance_seed, self.motion_seed, self.length)?;
        gen.generate_controlled(&bundle, &mask, &trajectories)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub dim: usize,
    pub mean: f64,
    pub variance: f64,
}

/// The `k` highest-variance directions with their statistics.
pub fn top_directions(stats: &AlphaStats, k: usize) -> Vec<DirectionSummary> {
    stats
        .top_by_variance(k)
        .into_iter()
        .map(|dim| DirectionSummary {
            dim,
            mean: stats.mean[dim],
            variance: stats.variance[dim],
        })
        .collect()
}

/// Evaluation seed base for α statistics served with a model.
pub const ALPHA_BASE_SEED: u64 = 1;
