//! Video feature extractors for the Fréchet metric.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClipDataset, ClipMeta, MotionFactor, ShapeKind};
use crate::discriminator::{pack_tensor, sampled_frames};
use crate::error::{Error, Result};
use crate::nn::{randn_vec, EqualConv2d, EqualLinear, ParamList};
use crate::tensor::{grad, no_grad, Adam, AdamConfig, Tensor};
use crate::video::VideoTensor;

pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, video: &VideoTensor) -> Result<Vec<f64>>;

    fn features_batch(&self, videos: &[VideoTensor]) -> Result<Vec<Vec<f64>>> {
        videos.iter().map(|v| self.features(v)).collect()
    }
}

/// Fixed Gaussian projection of 4×4-pooled frames and frame differences.
pub struct RandomProjection {
    frames: usize,
    resolution: usize,
    dim: usize,
    /// `[dim, input]` row-major.
    matrix: Vec<f64>,
}

impl RandomProjection {
    pub fn new(frames: usize, resolution: usize, dim: usize, seed: u64) -> Result<Self> {
        if resolution % 4 != 0 || frames < 2 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "random projection needs frames >= 2, resolution divisible by 4 (got {frames}, {resolution})"
            )));
        }
        let input = Self::input_len(frames, resolution);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = randn_vec::<f64>(dim * input, 1.0 / (input as f64).sqrt(), &mut rng);
        Ok(RandomProjection {
            frames,
            resolution,
            dim,
            matrix,
        })
    }

    fn input_len(frames: usize, resolution: usize) -> usize {
        let cell = (resolution / 4) * (resolution / 4) * 3;
        (2 * frames - 1) * cell
    }

    fn pooled(&self, video: &VideoTensor) -> Vec<f64> {
        let r = self.resolution;
        let c = r / 4;
        let mut out = Vec::with_capacity(video.frames * c * c * 3);
        for t in 0..video.frames {
            let f = video.frame_slice(t);
            for by in 0..c {
                for bx in 0..c {
                    let mut acc = [0.0f64; 3];
                    for y in by * 4..by * 4 + 4 {
                        for x in bx * 4..bx * 4 + 4 {
                            for (ch, a) in acc.iter_mut().enumerate() {
                                *a += f[(y * r + x) * 3 + ch] as f64;
                            }
                        }
                    }
                    out.extend(acc.map(|a| a / 16.0));
                }
            }
        }
        out
    }
}

impl FeatureExtractor for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        if (video.frames, video.height, video.width) != (self.frames, self.resolution, self.resolution) {
            return Err(Error::InvalidArgument(format!(
                "extractor expects {}×{}×{} videos",
                self.frames, self.resolution, self.resolution
            )));
        }
        let p = self.pooled(video);
        let cell = p.len() / self.frames;
        let mut input = p.clone();
        for t in 1..self.frames {
            for i in 0..cell {
                input.push(p[t * cell + i] - p[(t - 1) * cell + i]);
            }
        }
        let n = input.len();
        Ok((0..self.dim)
            .map(|k| self.matrix[k * n..(k + 1) * n].iter().zip(&input).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Class index of a synthetic clip: motion factor × shape kind.
pub fn shape_class(meta: &ClipMeta) -> usize {
    let f = match meta.factor {
        MotionFactor::Horizontal => 0,
        MotionFactor::Vertical => 1,
    };
    let k = match meta.kind {
        ShapeKind::Square => 0,
        ShapeKind::Disk => 1,
        ShapeKind::Diamond => 2,
    };
    f * 3 + k
}

pub const SHAPE_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub stride: usize,
    pub width: usize,
    pub features: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            stride: 5,
            width: 16,
            features: 64,
            steps: 300,
            batch: 32,
            lr: 0.002,
            seed: 0,
        }
    }
}

/// Small conv net over time-packed frames, trained to predict the motion
/// factor and shape kind of synthetic clips. Features are the penultimate
/// activations.
pub struct ShapeClassifier {
    frames: usize,
    resolution: usize,
    frame_idx: Vec<usize>,
    convs: Vec<EqualConv2d<f32>>,
    hidden: EqualLinear<f32>,
    head: EqualLinear<f32>,
    /// Training accuracy on the last epoch's batches.
    pub train_accuracy: f64,
}

impl ShapeClassifier {
    fn build(frames: usize, resolution: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if resolution < 8 || !resolution.is_power_of_two() || cfg.stride == 0 || cfg.stride >= frames {
            return Err(Error::InvalidArgument(format!(
                "classifier needs power-of-two resolution >= 8 and stride in [1, {frames})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let frame_idx = sampled_frames(frames, cfg.stride, 0);
        let mut convs = Vec::new();
        let mut c = 3 * frame_idx.len();
        let mut r = resolution;
        while r > 4 {
            let out = cfg.width * (convs.len() + 1).min(4);
            convs.push(EqualConv2d::new(c, out, 3, true, true, &mut rng));
            c = out;
            r /= 2;
        }
        let hidden = EqualLinear::new(c * 16, cfg.features, 0.0, 1.0, true, &mut rng);
        let head = EqualLinear::new(cfg.features, SHAPE_CLASSES, 0.0, 1.0, false, &mut rng);
        Ok(ShapeClassifier {
            frames,
            resolution,
            frame_idx,
            convs,
            hidden,
            head,
            train_accuracy: 0.0,
        })
    }

    fn params(&self) -> ParamList<f32> {
        let mut p = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            c.params(&format!("conv{i}"), &mut p);
        }
        self.hidden.params("hidden", &mut p);
        self.head.params("head", &mut p);
        p
    }

    fn trunk(&self, videos: &[VideoTensor]) -> Result<Tensor<f32>> {
        for v in videos {
            if (v.frames, v.height, v.width) != (self.frames, self.resolution, self.resolution) {
                return Err(Error::InvalidArgument(format!(
                    "classifier expects {}×{}×{} videos",
                    self.frames, self.resolution, self.resolution
                )));
            }
        }
        let frames = VideoTensor::batch_nchw::<f32>(videos)?;
        let mut x = pack_tensor(&frames, videos.len(), &self.frame_idx);
        for c in &self.convs {
            x = c.forward(&x).avg_pool2();
        }
        let b = videos.len();
        Ok(self.hidden.forward(&x.reshape(&[b, x.numel() / b])))
    }

    /// Trains on labelled clips of `data` (every video needs metadata).
    pub fn train(data: &ClipDataset, cfg: &ClassifierConfig) -> Result<Self> {
        if data.videos.iter().any(|v| v.meta.is_none()) {
            return Err(Error::InvalidArgument("classifier training needs labelled clips".into()));
        }
        let mut model = Self::build(data.clip_length, data.resolution, cfg)?;
        let params: Vec<Tensor<f32>> = model.params().into_iter().map(|(_, p)| p).collect();
        let mut opt = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
            },
            &params,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut correct = 0usize;
        let mut seen = 0usize;
        let tail = (cfg.steps / 10).max(1);
        for step in 0..cfg.steps {
            let mut clips = Vec::with_capacity(cfg.batch);
            let mut labels = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let (clip, vi, _) = data.sample_clip_with_index(&mut rng);
                clips.push(clip);
                labels.push(shape_class(data.videos[vi].meta.as_ref().unwrap()));
            }
            let logits = model.head.forward(&model.trunk(&clips)?);
            let loss = cross_entropy(&logits, &labels);
            if step + tail >= cfg.steps {
                let l = logits.to_f64_vec();
                for (b, &y) in labels.iter().enumerate() {
                    let row = &l[b * SHAPE_CLASSES..(b + 1) * SHAPE_CLASSES];
                    let pred = (0..SHAPE_CLASSES).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
                    correct += (pred == y) as usize;
                    seen += 1;
                }
            }
            let grads = grad(&loss, &params);
            opt.step(&params, &grads);
        }
        model.train_accuracy = correct as f64 / seen.max(1) as f64;
        log::info!("shape classifier trained, accuracy {:.3}", model.train_accuracy);
        Ok(model)
    }

    pub fn predict(&self, video: &VideoTensor) -> Result<usize> {
        let _g = no_grad();
        let l = self.head.forward(&self.trunk(std::slice::from_ref(video))?).to_f64_vec();
        Ok((0..SHAPE_CLASSES).max_by(|&i, &j| l[i].total_cmp(&l[j])).unwrap())
    }
}

/// Mean negative log-likelihood of `labels` under softmax of `logits: [B, C]`.
pub fn cross_entropy(logits: &Tensor<f32>, labels: &[usize]) -> Tensor<f32> {
    let (b, c) = (logits.dim(0), logits.dim(1));
    let max: Vec<f32> = logits.to_vec().chunks(c).map(|r| r.iter().cloned().fold(f32::MIN, f32::max)).collect();
    let shifted = logits.sub(&Tensor::from_vec(max, &[b, 1]).broadcast_to(&[b, c]));
    let lse = shifted.exp().sum_axes(&[1], false).log();
    let mut onehot = vec![0.0f32; b * c];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * c + y] = 1.0;
    }
    let picked = shifted.mul(&Tensor::from_vec(onehot, &[b, c])).sum_axes(&[1], false);
    lse.sub(&picked).mean_all()
}

impl FeatureExtractor for ShapeClassifier {
    fn dim(&self) -> usize {
        self.hidden.out_features()
    }

    fn features(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        Ok(self.features_batch(std::slice::from_ref(video))?.remove(0))
    }

    fn features_batch(&self, videos: &[VideoTensor]) -> Result<Vec<Vec<f64>>> {
        let _g = no_grad();
        let mut out = Vec::with_capacity(videos.len());
        for chunk in videos.chunks(64) {
            let f = self.trunk(chunk)?.to_f64_vec();
            let d = f.len() / chunk.len();
            out.extend(f.chunks(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

/// Draws `count` clips uniformly from `data`.
pub fn sample_clips(data: &ClipDataset, count: usize, seed: u64) -> Vec<VideoTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| data.sample_clip(&mut rng)).collect()
}

