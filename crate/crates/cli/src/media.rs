//! Frame and video encodings for files and HTTP payloads.

use std::io::Cursor;
use std::path::Path;

use anyhow::{bail, Context, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, ImageFormat, RgbImage, RgbaImage};
use motionbank_core::video::from_u8;
use motionbank_core::{Frame, VideoTensor};

fn rgb_image(frame: &Frame) -> RgbImage {
    RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.to_rgb8()).expect("frame buffer size")
}

pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    rgb_image(frame)
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory");
    out.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .context("decoding PNG frame")?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Frame {
        height: h,
        width: w,
        data: img.as_raw().iter().map(|&b| from_u8(b)).collect(),
    })
}

/// Animated GIF, 8-bit palette per frame.
pub fn encode_gif(video: &VideoTensor, frame_ms: u32) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new_with_speed(&mut out, 10);
        enc.set_repeat(Repeat::Infinite).expect("GIF header");
        for t in 0..video.frames {
            let rgb = rgb_image(&video.frame(t));
            let rgba: RgbaImage = image::DynamicImage::ImageRgb8(rgb).to_rgba8();
            let frame = image::Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(frame_ms, 1));
            enc.encode_frame(frame).expect("GIF frame into memory");
        }
    }
    out
}

pub fn png_base64(video: &VideoTensor) -> Vec<String> {
    (0..video.frames).map(|t| STANDARD.encode(encode_png(&video.frame(t)))).collect()
}

pub fn video_from_base64(frames: &[String]) -> Result<VideoTensor> {
    if frames.is_empty() {
        bail!("video has no frames");
    }
    let decoded = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let bytes = STANDARD.decode(f).with_context(|| format!("frame {i} is not base64"))?;
            decode_png(&bytes).with_context(|| format!("frame {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoTensor::from_frames(&decoded)?)
}

/// `dir/frame_%05d.png`.
pub fn write_png_frames(video: &VideoTensor, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for t in 0..video.frames {
        let path = dir.join(format!("frame_{t:05}.png"));
        std::fs::write(&path, encode_png(&video.frame(t))).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Reads `frame_*.png` from `dir` in name order.
pub fn read_png_frames(dir: &Path) -> Result<VideoTensor> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG frames in {}", dir.display());
    }
    let frames = paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            decode_png(&bytes).with_context(|| p.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoTensor::from_frames(&frames)?)
}
