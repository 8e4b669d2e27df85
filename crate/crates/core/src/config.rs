//! Experiment configuration: one TOML file with a table per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ShapesSpec;
use crate::discriminator::TemporalPyramidConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Packed clip file or PNG tree; synthetic shapes when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Number of synthetic videos.
    pub count: usize,
    pub shapes: ShapesSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            count: 2048,
            shapes: ShapesSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Penultimate features of a classifier trained on the shapes factors.
    Classifier,
    /// Fixed random projection of pooled frames and frame differences.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Videos per evaluation set.
    pub num_samples: usize,
    /// Minimum flow magnitude (px/frame) for a pixel to count.
    pub epsilon: f64,
    /// Normalization magnitude; the 99th percentile of the evaluation set
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_norm: Option<f64>,
    pub fid_samples: usize,
    pub extractor: ExtractorKind,
    /// Directions analysed by default.
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            num_samples: 1000,
            epsilon: 0.1,
            h_norm: None,
            fid_samples: 256,
            extractor: ExtractorKind::Classifier,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: String,
    pub max_concurrent: usize,
    pub max_length: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1:8080".into(),
            max_concurrent: 4,
            max_length: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub pyramid: TemporalPyramidConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            pyramid: TemporalPyramidConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig {
                shapes: ShapesSpec {
                    canvas: 64,
                    ..ShapesSpec::default()
                },
                ..DataConfig::default()
            },
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-size model: 64 px, 512 directions, strides 1, 3, 5, 7.
    pub fn paper() -> Self {
        ExperimentConfig::default()
    }

    /// Single-accelerator scale: 32 px, batch 16, strides 1, 3, 5.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig::default();
        c.generator.resolution = 32;
        c.generator.channels = vec![256, 128, 64];
        c.pyramid = TemporalPyramidConfig::new(vec![1, 3, 5]);
        c.train.batch_size = 16;
        c.train.total_steps = 50_000;
        c.data.shapes.canvas = 32;
        c
    }

    /// Small enough to train in minutes on one CPU core.
    pub fn cpu() -> Self {
        let mut c = ExperimentConfig::desk();
        c.generator = GeneratorConfig {
            dim_za: 16,
            dim_zm: 8,
            n: 16,
            video_length: 16,
            resolution: 32,
            mlp_depth: 2,
            channels: vec![32, 16, 8],
            appearance_lr_mul: 0.1,
            motion_lr_mul: 0.1,
            differentiable_svd: true,
        };
        c.train.batch_size = 8;
        c.train.total_steps = 1500;
        c.train.log_every = 50;
        c.data.count = 512;
        c.eval.num_samples = 1000;
        c.eval.fid_samples = 128;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "cpu" => Ok(Self::cpu()),
            other => Err(Error::Config(format!("unknown profile {other:?} (paper, desk, cpu)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.pyramid.validate(self.generator.video_length)?;
        self.train.validate()?;
        if self.data.path.is_none() {
            self.data.shapes.validate()?;
            if self.data.shapes.canvas != self.generator.resolution {
                return Err(Error::Config(format!(
                    "shapes canvas {} differs from resolution {}",
                    self.data.shapes.canvas, self.generator.resolution
                )));
            }
            if self.data.shapes.frames < self.generator.video_length {
                return Err(Error::Config("shapes videos are shorter than the clip length".into()));
            }
        }
        if self.serve.max_concurrent == 0 {
            return Err(Error::Config("serve.max_concurrent must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_roundtrip() {
        for name in ["paper", "desk", "cpu"] {
            let c = ExperimentConfig::profile(name).unwrap();
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = ExperimentConfig::from_toml("seed = 3\n[train]\nbatch_size = 4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.lr, 0.002);
        assert!(ExperimentConfig::from_toml("[train]\nbogus = 1\n").is_err());
    }
}
