//! Frame containers. Pixels are `[-1, 1]`, stored frame-major as `T × H × W × 3`.

use motionbank_tensor::{Element, Tensor};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// `H × W × 3`.
    pub data: Vec<f32>,
}

impl Frame {
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Rec. 601 luma in `[-1, 1]`.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `T × H × W × 3`.
    pub data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure_dim("video", frames * height * width * 3, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("video"));
        }
        Ok(VideoTensor {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        VideoTensor {
            frames,
            height,
            width,
            data: vec![0.0; frames * height * width * 3],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame_slice(&self, t: usize) -> &[f32] {
        &self.data[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    pub fn frame(&self, t: usize) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            data: self.frame_slice(t).to_vec(),
        }
    }

    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("video needs at least one frame".into()))?;
        let mut data = Vec::with_capacity(frames.len() * first.data.len());
        for f in frames {
            ensure_dim("frame size", first.data.len(), f.data.len())?;
            data.extend_from_slice(&f.data);
        }
        Self::new(frames.len(), first.height, first.width, data)
    }

    /// Frames in reverse order.
    pub fn reversed(&self) -> VideoTensor {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.frames).rev() {
            data.extend_from_slice(self.frame_slice(t));
        }
        VideoTensor { data, ..self.clone() }
    }

    /// `[T, 3, H, W]`.
    pub fn to_nchw<T: Element>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.data.len());
        for t in 0..self.frames {
            let f = self.frame_slice(t);
            for c in 0..3 {
                out.extend((0..h * w).map(|p| T::lit(f[p * 3 + c] as f64)));
            }
        }
        Tensor::from_vec(out, &[self.frames, 3, h, w])
    }

    /// Inverse of [`VideoTensor::to_nchw`]; `[T, 3, H, W]` input.
    pub fn from_nchw<T: Element>(x: &Tensor<T>) -> Result<Self> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::InvalidArgument(format!("expected [T, 3, H, W], got {s:?}")));
        }
        let (t_len, h, w) = (s[0], s[2], s[3]);
        let src = x.data();
        let mut out = vec![0.0f32; src.len()];
        for t in 0..t_len {
            for c in 0..3 {
                for p in 0..h * w {
                    out[(t * h * w + p) * 3 + c] = src[(t * 3 + c) * h * w + p].as_f64() as f32;
                }
            }
        }
        Self::new(t_len, h, w, out)
    }

    /// Stacks videos of equal shape into `[B * T, 3, H, W]`.
    pub fn batch_nchw<T: Element>(videos: &[VideoTensor]) -> Result<Tensor<T>> {
        let first = videos
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty video batch".into()))?;
        let mut data = Vec::with_capacity(videos.len() * first.data.len());
        for v in videos {
            if (v.frames, v.height, v.width) != (first.frames, first.height, first.width) {
                return Err(Error::InvalidArgument("videos in a batch must share a shape".into()));
            }
            data.extend(v.to_nchw::<T>().to_vec());
        }
        Ok(Tensor::from_vec(
            data,
            &[videos.len() * first.frames, 3, first.height, first.width],
        ))
    }
}

pub fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}
