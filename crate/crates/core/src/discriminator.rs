//! Image critic on single frames and a pyramid of 2-D video critics over
//! time-to-channel packed clips.

use motionbank_tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::nn::{EqualConv2d, EqualLinear, ParamList};
use crate::video::{Frame, VideoTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalPyramidConfig {
    pub strides: Vec<usize>,
    /// Start each packing at a random offset in `[0, stride)` during
    /// training instead of frame 0.
    pub random_phase: bool,
}

impl Default for TemporalPyramidConfig {
    fn default() -> Self {
        TemporalPyramidConfig {
            strides: vec![1, 3, 5, 7],
            random_phase: false,
        }
    }
}

impl TemporalPyramidConfig {
    pub fn new(strides: Vec<usize>) -> Self {
        TemporalPyramidConfig {
            strides,
            random_phase: false,
        }
    }

    pub fn validate(&self, video_length: usize) -> Result<()> {
        if self.strides.is_empty() {
            return Err(Error::Config("pyramid needs at least one stride".into()));
        }
        for w in self.strides.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(format!("strides must increase strictly: {:?}", self.strides)));
            }
        }
        for &s in &self.strides {
            check_stride(s, video_length)?;
        }
        Ok(())
    }

    /// Packed channel counts per critic.
    pub fn channels(&self, video_length: usize) -> Vec<usize> {
        self.strides.iter().map(|&s| 3 * sampled_frames(video_length, s, 0).len()).collect()
    }
}

fn check_stride(stride: usize, video_length: usize) -> Result<()> {
    if stride >= 1 && stride < video_length {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "stride {stride} must lie in [1, {video_length})"
        )))
    }
}

/// Frame indices `phase, phase + stride, ...` below `video_length`.
pub fn sampled_frames(video_length: usize, stride: usize, phase: usize) -> Vec<usize> {
    (phase..video_length).step_by(stride.max(1)).collect()
}

/// Largest start offset that keeps the frame count of phase 0.
pub fn max_phase(video_length: usize, stride: usize) -> usize {
    let count = sampled_frames(video_length, stride, 0).len();
    (stride - 1).min(video_length - 1 - (count - 1) * stride)
}

/// Selected frames concatenated along channels, `H × W × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedVideo {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_indices: Vec<usize>,
    pub data: Vec<f32>,
}

impl PackedVideo {
    /// RGB triple of packed frame `k` (the `k`-th sampled frame).
    pub fn frame(&self, k: usize) -> Frame {
        let mut data = Vec::with_capacity(self.height * self.width * 3);
        for p in 0..self.height * self.width {
            let o = p * self.channels + 3 * k;
            data.extend_from_slice(&self.data[o..o + 3]);
        }
        Frame {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn unpack(&self) -> Vec<Frame> {
        (0..self.channels / 3).map(|k| self.frame(k)).collect()
    }
}

pub fn ttoc_pack(video: &VideoTensor, stride: usize) -> Result<PackedVideo> {
    check_stride(stride, video.frames)?;
    let idx = sampled_frames(video.frames, stride, 0);
    let k = 3 * idx.len();
    let hw = video.height * video.width;
    let mut data = vec![0.0f32; hw * k];
    for (j, &t) in idx.iter().enumerate() {
        let f = video.frame_slice(t);
        for p in 0..hw {
            data[p * k + 3 * j..p * k + 3 * j + 3].copy_from_slice(&f[p * 3..p * 3 + 3]);
        }
    }
    Ok(PackedVideo {
        height: video.height,
        width: video.width,
        channels: k,
        frame_indices: idx,
        data,
    })
}

/// `frames: [B * T, 3, H, W]` -> `[B, 3F, H, W]` keeping `idx` of each video.
pub fn pack_tensor<T: Element>(frames: &Tensor<T>, videos: usize, idx: &[usize]) -> Tensor<T> {
    let s = frames.shape();
    let t_len = s[0] / videos;
    let (h, w) = (s[2], s[3]);
    let channel_idx: Vec<usize> = idx.iter().flat_map(|&t| (0..3).map(move |c| 3 * t + c)).collect();
    frames
        .reshape(&[videos, t_len * 3, h, w])
        .index_select(1, &channel_idx)
}

pub fn sample_frame(video: &VideoTensor, rng: &mut impl Rng) -> Frame {
    video.frame(rng.random_range(0..video.frames))
}

/// Residual downsampling block.
struct DownBlock<T: Element> {
    conv1: EqualConv2d<T>,
    conv2: EqualConv2d<T>,
    skip: EqualConv2d<T>,
}

impl<T: Element> DownBlock<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv2.forward(&self.conv1.forward(x)).avg_pool2();
        let s = self.skip.forward(&x.avg_pool2());
        y.add(&s).mul_scalar(std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Convolutional critic from `K` input channels at `R × R` to one logit:
/// 1×1 input layer, `log2(R) - 1` residual blocks down to 2×2, minibatch
/// standard deviation, a 3×3 conv and two dense layers.
pub struct Critic<T: Element> {
    from_rgb: EqualConv2d<T>,
    blocks: Vec<DownBlock<T>>,
    final_conv: EqualConv2d<T>,
    fc: EqualLinear<T>,
    out: EqualLinear<T>,
    in_channels: usize,
    resolution: usize,
    group: usize,
}

impl<T: Element> Critic<T> {
    /// `width(r)` is the feature width at `r` px.
    pub fn new(in_channels: usize, resolution: usize, width: impl Fn(usize) -> usize, rng: &mut impl Rng) -> Self {
        let top = width(resolution);
        let from_rgb = EqualConv2d::new(in_channels, top, 1, true, true, rng);
        let mut blocks = Vec::new();
        let mut r = resolution;
        while r > 2 {
            let (cin, cout) = (width(r), width(r / 2));
            blocks.push(DownBlock {
                conv1: EqualConv2d::new(cin, cin, 3, true, true, rng),
                conv2: EqualConv2d::new(cin, cout, 3, true, true, rng),
                skip: EqualConv2d::new(cin, cout, 1, false, false, rng),
            });
            r /= 2;
        }
        let c = width(2);
        Critic {
            from_rgb,
            blocks,
            final_conv: EqualConv2d::new(c + 1, c, 3, true, true, rng),
            fc: EqualLinear::new(c * 4, c, 0.0, 1.0, true, rng),
            out: EqualLinear::new(c, 1, 0.0, 1.0, false, rng),
            in_channels,
            resolution,
            group: 4,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `[B, K, R, R]` -> `[B]` logits.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        assert!(
            s.len() == 4 && s[1] == self.in_channels && s[2] == self.resolution && s[3] == self.resolution,
            "critic expects [B, {}, {}, {}], got {s:?}",
            self.in_channels,
            self.resolution,
            self.resolution
        );
        let b = s[0];
        let mut h = self.from_rgb.forward(x);
        for blk in &self.blocks {
            h = blk.forward(&h);
        }
        h = minibatch_stddev(&h, self.group);
        h = self.final_conv.forward(&h);
        let c = h.dim(1);
        h = self.fc.forward(&h.reshape(&[b, c * 4]));
        self.out.forward(&h).reshape(&[b])
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.from_rgb.params(&format!("{prefix}.from_rgb"), out);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.conv1.params(&format!("{prefix}.block{i}.conv1"), out);
            blk.conv2.params(&format!("{prefix}.block{i}.conv2"), out);
            blk.skip.params(&format!("{prefix}.block{i}.skip"), out);
        }
        self.final_conv.params(&format!("{prefix}.final_conv"), out);
        self.fc.params(&format!("{prefix}.fc"), out);
        self.out.params(&format!("{prefix}.out"), out);
    }
}

/// Appends one channel holding the mean feature standard deviation within
/// groups of up to `group` samples (the largest size dividing the batch).
pub fn minibatch_stddev<T: Element>(x: &Tensor<T>, group: usize) -> Tensor<T> {
    let s = x.shape().to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let g = (1..=group.min(b)).rev().find(|g| b % g == 0).unwrap_or(1);
    let m = b / g;
    let y = x.reshape(&[g, m, c, h, w]);
    let centered = y.sub(&y.mean_axes(&[0], true));
    let std = centered.square().mean_axes(&[0], false).add_scalar(1e-8).sqrt();
    let stat = std.mean_axes(&[1, 2, 3], false);
    let tiled = stat
        .reshape(&[1, m, 1, 1, 1])
        .broadcast_to(&[g, m, 1, h, w])
        .reshape(&[b, 1, h, w]);
    Tensor::concat(&[x.clone(), tiled], 1)
}

/// The image critic plus one video critic per pyramid stride.
pub struct Discriminator<T: Element = f32> {
    pub image: Critic<T>,
    pub videos: Vec<Critic<T>>,
    pub pyramid: TemporalPyramidConfig,
    pub video_length: usize,
}

/// Logits for a batch: `image: [B]`, one `[B]` per pyramid critic.
pub struct Scores<T: Element> {
    pub image: Tensor<T>,
    pub videos: Vec<Tensor<T>>,
}

impl<T: Element> Discriminator<T> {
    pub fn new(gen: &GeneratorConfig, pyramid: TemporalPyramidConfig, seed: u64) -> Result<Self> {
        gen.validate()?;
        pyramid.validate(gen.video_length)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = |r: usize| gen.channels_at(r.max(4));
        let image = Critic::new(3, gen.resolution, width, &mut rng);
        let videos = pyramid
            .channels(gen.video_length)
            .into_iter()
            .map(|k| Critic::new(k, gen.resolution, width, &mut rng))
            .collect();
        Ok(Discriminator {
            image,
            videos,
            pyramid,
            video_length: gen.video_length,
        })
    }

    pub fn params(&self) -> ParamList<T> {
        let mut out = Vec::new();
        self.image.params("image", &mut out);
        for (i, c) in self.videos.iter().enumerate() {
            c.params(&format!("video{i}"), &mut out);
        }
        out
    }

    /// Critic inputs for a batch `frames: [B * T, 3, R, R]`: one frame per
    /// video chosen by `frame_idx`, and one packing per stride starting at
    /// `phases[i]`.
    pub fn inputs(&self, frames: &Tensor<T>, videos: usize, frame_idx: &[usize], phases: &[usize]) -> (Tensor<T>, Vec<Tensor<T>>) {
        let t_len = frames.dim(0) / videos;
        let rows: Vec<usize> = frame_idx.iter().enumerate().map(|(b, &t)| b * t_len + t).collect();
        let image = frames.index_select(0, &rows);
        let packed = self
            .pyramid
            .strides
            .iter()
            .zip(phases)
            .map(|(&s, &p)| {
                let idx = sampled_frames(t_len, s, p);
                assert_eq!(idx.len(), sampled_frames(t_len, s, 0).len(), "phase {p} drops a frame at stride {s}");
                pack_tensor(frames, videos, &idx)
            })
            .collect();
        (image, packed)
    }

    pub fn score_inputs(&self, image: &Tensor<T>, packed: &[Tensor<T>]) -> Scores<T> {
        Scores {
            image: self.image.forward(image),
            videos: self.videos.iter().zip(packed).map(|(c, x)| c.forward(x)).collect(),
        }
    }

    fn check_video(&self, video: &VideoTensor) -> Result<()> {
        let r = self.image.resolution();
        if video.height != r || video.width != r {
            return Err(Error::InvalidArgument(format!(
                "critic expects {r}×{r} frames, got {}×{}",
                video.height, video.width
            )));
        }
        if video.frames != self.video_length {
            return Err(Error::InvalidArgument(format!(
                "video critics expect {} frames, got {}",
                self.video_length, video.frames
            )));
        }
        Ok(())
    }

    pub fn score_image(&self, frame: &Frame) -> Result<f64> {
        let r = self.image.resolution();
        if frame.height != r || frame.width != r {
            return Err(Error::InvalidArgument(format!("critic expects {r}×{r}, got {}×{}", frame.height, frame.width)));
        }
        let v = VideoTensor::new(1, frame.height, frame.width, frame.data.clone())?;
        let _g = motionbank_tensor::no_grad();
        Ok(self.image.forward(&v.to_nchw::<T>()).item().as_f64())
    }

    pub fn score_pyramid(&self, video: &VideoTensor) -> Result<Vec<f64>> {
        self.check_video(video)?;
        let _g = motionbank_tensor::no_grad();
        let frames = video.to_nchw::<T>();
        self.pyramid
            .strides
            .iter()
            .zip(&self.videos)
            .map(|(&s, c)| {
                let idx = sampled_frames(video.frames, s, 0);
                Ok(c.forward(&pack_tensor(&frames, 1, &idx)).item().as_f64())
            })
            .collect()
    }

    pub fn load_params(&mut self, named: &[(String, Vec<T>)]) -> Result<()> {
        let params = self.params();
        crate::error::ensure_dim("discriminator parameter count", params.len(), named.len())?;
        for ((name, p), (src, data)) in params.iter().zip(named) {
            if name != src {
                return Err(Error::InvalidArgument(format!("expected parameter {name}, found {src}")));
            }
            crate::error::ensure_dim("discriminator parameter size", p.numel(), data.len())?;
            p.set_data(data.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_counts() {
        let p = TemporalPyramidConfig::new(vec![1, 3, 5, 7]);
        assert_eq!(p.channels(16), vec![48, 18, 12, 9]);
        assert!(TemporalPyramidConfig::new(vec![3, 3]).validate(16).is_err());
        assert!(TemporalPyramidConfig::new(vec![16]).validate(16).is_err());
    }

    #[test]
    fn critic_depth_follows_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Critic::<f32>::new(3, 32, |_| 4, &mut rng);
        assert_eq!(c.num_blocks(), 4);
    }
}
