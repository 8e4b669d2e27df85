//! Clip datasets: PNG directory trees, a packed binary container, and the
//! synthetic moving-shapes generator.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{from_u8, to_u8, VideoTensor};

/// One stored video: `frames × H × W × 3` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredVideo {
    pub id: String,
    pub frames: usize,
    pub pixels: Vec<u8>,
    pub meta: Option<ClipMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionFactor {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Disk,
    Diamond,
}

/// Ground truth for a synthetic clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub factor: MotionFactor,
    pub kind: ShapeKind,
    /// `(u, v)` displacement of the shape centre between consecutive
    /// frames, `u` rightward and `v` downward, px/frame.
    pub velocities: Vec<[f64; 2]>,
}

impl ClipMeta {
    /// Flow angle (degrees, counter-clockwise from rightward with up at 90)
    /// of the motion that holds for most transitions.
    pub fn dominant_angle(&self) -> f64 {
        let mut counts = [0usize; 4];
        for v in &self.velocities {
            counts[angle_quadrant(flow_angle(v[0], v[1]))] += 1;
        }
        let best = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap_or(0);
        best as f64 * 90.0
    }
}

/// Angle of a flow vector in degrees `[0, 360)`: 0 right, 90 up, 180 left,
/// 270 down.
pub fn flow_angle(u: f64, v: f64) -> f64 {
    let a = (-v).atan2(u).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else if a >= 360.0 {
        a - 360.0
    } else {
        a
    }
}

fn angle_quadrant(a: f64) -> usize {
    (((a + 45.0) / 90.0).floor() as usize) % 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDataset {
    pub videos: Vec<StoredVideo>,
    pub clip_length: usize,
    pub resolution: usize,
    /// Videos dropped during ingestion (unreadable or too short).
    pub skipped: usize,
}

impl ClipDataset {
    pub fn new(videos: Vec<StoredVideo>, clip_length: usize, resolution: usize) -> Result<Self> {
        let ds = ClipDataset {
            videos,
            clip_length,
            resolution,
            skipped: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let fl = self.resolution * self.resolution * 3;
        for v in &self.videos {
            if v.frames < self.clip_length || v.pixels.len() != v.frames * fl {
                return Err(Error::InvalidArgument(format!("video {} has an inconsistent shape", v.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Number of distinct `(video, start)` clips.
    pub fn num_clips(&self) -> usize {
        self.videos.iter().map(|v| v.frames + 1 - self.clip_length).sum()
    }

    pub fn clip(&self, video: usize, start: usize) -> VideoTensor {
        let v = &self.videos[video];
        let fl = self.resolution * self.resolution * 3;
        let bytes = &v.pixels[start * fl..(start + self.clip_length) * fl];
        VideoTensor {
            frames: self.clip_length,
            height: self.resolution,
            width: self.resolution,
            data: bytes.iter().map(|&b| from_u8(b)).collect(),
        }
    }

    /// Uniform video, then uniform start offset.
    pub fn sample_clip(&self, rng: &mut impl Rng) -> VideoTensor {
        self.sample_clip_with_index(rng).0
    }

    pub fn sample_clip_with_index(&self, rng: &mut impl Rng) -> (VideoTensor, usize, usize) {
        assert!(!self.is_empty(), "sampling from an empty dataset");
        let vi = rng.random_range(0..self.videos.len());
        let start = rng.random_range(0..=self.videos[vi].frames - self.clip_length);
        (self.clip(vi, start), vi, start)
    }

    pub fn sample_batch(&self, batch: usize, rng: &mut impl Rng) -> Vec<VideoTensor> {
        (0..batch).map(|_| self.sample_clip(rng)).collect()
    }

    /// Writes `root/<id>/frame_%05d.png` plus `meta.json` for synthetic clips.
    pub fn save_png_tree(&self, root: &Path) -> Result<()> {
        let r = self.resolution as u32;
        let fl = self.resolution * self.resolution * 3;
        for v in &self.videos {
            let dir = root.join(&v.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            for t in 0..v.frames {
                let path = dir.join(format!("frame_{t:05}.png"));
                let img = image::RgbImage::from_raw(r, r, v.pixels[t * fl..(t + 1) * fl].to_vec())
                    .expect("frame buffer matches resolution");
                img.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            }
            if let Some(meta) = &v.meta {
                let path = dir.join("meta.json");
                let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Parse(e.to_string()))?;
                fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
        }
        Ok(())
    }

    /// Single-file container: magic, resolution, video count, then per video
    /// an id, frame count, optional metadata and raw RGB bytes.
    pub fn save_packed(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PACKED_MAGIC);
        buf.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        buf.extend_from_slice(&(self.videos.len() as u32).to_le_bytes());
        for v in &self.videos {
            write_bytes(&mut buf, v.id.as_bytes());
            buf.extend_from_slice(&(v.frames as u32).to_le_bytes());
            let meta = match &v.meta {
                Some(m) => serde_json::to_vec(m).map_err(|e| Error::Parse(e.to_string()))?,
                None => Vec::new(),
            };
            write_bytes(&mut buf, &meta);
            buf.extend_from_slice(&v.pixels);
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

const PACKED_MAGIC: &[u8; 8] = b"MBCLIPS1";

fn write_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
    buf.extend_from_slice(b);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse(format!("{}: truncated at byte {}", self.path.display(), self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn load_packed(path: &Path, clip_length: usize, resolution: usize) -> Result<ClipDataset> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut c = Cursor { buf: &raw, pos: 0, path };
    if c.take(8)? != PACKED_MAGIC {
        return Err(Error::Parse(format!("{}: not a packed clip file", path.display())));
    }
    let res = c.u32()?;
    if res != resolution {
        return Err(Error::InvalidArgument(format!(
            "{}: stored at {res}px, requested {resolution}px",
            path.display()
        )));
    }
    let count = c.u32()?;
    let fl = res * res * 3;
    let mut videos = Vec::with_capacity(count);
    let mut skipped = 0;
    for _ in 0..count {
        let id_len = c.u32()?;
        let id = String::from_utf8_lossy(c.take(id_len)?).into_owned();
        let frames = c.u32()?;
        let meta_len = c.u32()?;
        let meta_bytes = c.take(meta_len)?;
        let meta = if meta_len == 0 {
            None
        } else {
            Some(serde_json::from_slice(meta_bytes).map_err(|e| Error::Parse(e.to_string()))?)
        };
        let pixels = c.take(frames * fl)?.to_vec();
        if frames < clip_length {
            skipped += 1;
            continue;
        }
        videos.push(StoredVideo {
            id,
            frames,
            pixels,
            meta,
        });
    }
    finish(videos, skipped, clip_length, resolution, path)
}

fn finish(videos: Vec<StoredVideo>, skipped: usize, clip_length: usize, resolution: usize, path: &Path) -> Result<ClipDataset> {
    if videos.is_empty() {
        return Err(Error::NoClips(path.to_path_buf()));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} unreadable or short videos", path.display());
    }
    let mut ds = ClipDataset::new(videos, clip_length, resolution)?;
    ds.skipped = skipped;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub clip_length: usize,
    pub resolution: usize,
}

/// Loads either a packed clip file or a directory of per-video directories
/// of `frame_%05d.png`. Videos are ordered by path.
pub fn ingest(path: &Path, cfg: &IngestConfig) -> Result<ClipDataset> {
    if cfg.clip_length == 0 || cfg.resolution == 0 {
        return Err(Error::Config("clip length and resolution must be positive".into()));
    }
    if path.is_file() {
        return load_packed(path, cfg.clip_length, cfg.resolution);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(format!("listing {}", path.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut videos = Vec::new();
    let mut skipped = 0;
    for dir in dirs {
        match load_video_dir(&dir, cfg) {
            Ok(Some(v)) => videos.push(v),
            Ok(None) => skipped += 1,
            Err(e) => {
                log::warn!("skipping {}: {e}", dir.display());
                skipped += 1;
            }
        }
    }
    finish(videos, skipped, cfg.clip_length, cfg.resolution, path)
}

fn load_video_dir(dir: &Path, cfg: &IngestConfig) -> Result<Option<StoredVideo>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    frames.sort();
    if frames.len() < cfg.clip_length {
        return Ok(None);
    }
    let r = cfg.resolution as u32;
    let mut pixels = Vec::with_capacity(frames.len() * (r * r * 3) as usize);
    for f in &frames {
        let img = image::open(f).map_err(|source| Error::Image { path: f.clone(), source })?.to_rgb8();
        let img = if img.width() == r && img.height() == r {
            img
        } else {
            image::imageops::resize(&img, r, r, FilterType::Triangle)
        };
        pixels.extend_from_slice(img.as_raw());
    }
    let meta_path = dir.join("meta.json");
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?)
    } else {
        None
    };
    Ok(Some(StoredVideo {
        id: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        frames: frames.len(),
        pixels,
        meta,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapesSpec {
    pub canvas: usize,
    pub kinds: Vec<ShapeKind>,
    pub factors: Vec<MotionFactor>,
    /// Speed range in px/frame.
    pub speed: [f64; 2],
    /// Half-extent range in px.
    pub size: [f64; 2],
    /// Frames per stored video.
    pub frames: usize,
    pub seed: u64,
}

impl Default for ShapesSpec {
    fn default() -> Self {
        ShapesSpec {
            canvas: 32,
            kinds: vec![ShapeKind::Square, ShapeKind::Disk, ShapeKind::Diamond],
            factors: vec![MotionFactor::Horizontal, MotionFactor::Vertical],
            speed: [1.0, 2.0],
            size: [4.0, 6.0],
            frames: 24,
            seed: 0,
        }
    }
}

impl ShapesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.factors.is_empty() {
            return Err(Error::Config("shapes need at least one kind and one motion factor".into()));
        }
        if !(self.speed[0] >= 0.0 && self.speed[1] >= self.speed[0]) {
            return Err(Error::Config(format!("bad speed range {:?}", self.speed)));
        }
        if !(self.size[0] > 0.0 && self.size[1] >= self.size[0] && 2.0 * self.size[1] < self.canvas as f64) {
            return Err(Error::Config(format!("bad size range {:?} for canvas {}", self.size, self.canvas)));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be positive".into()));
        }
        Ok(())
    }
}

/// Supersampling factor per axis when rasterizing shapes.
const SUPERSAMPLE: usize = 4;

fn coverage(kind: ShapeKind, cx: f64, cy: f64, s: f64, px: usize, py: usize) -> f64 {
    let mut hit = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
            let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
            let inside = match kind {
                ShapeKind::Square => x.abs() <= s && y.abs() <= s,
                ShapeKind::Disk => x * x + y * y <= s * s,
                ShapeKind::Diamond => x.abs() + y.abs() <= s * 1.25,
            };
            hit += inside as usize;
        }
    }
    hit as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

/// Renders one shape at centre `(cx, cy)` over a dark background.
fn render_shape(canvas: usize, kind: ShapeKind, cx: f64, cy: f64, s: f64, color: [f64; 3]) -> Vec<u8> {
    let bg = [-0.9, -0.9, -0.9];
    let mut out = Vec::with_capacity(canvas * canvas * 3);
    for py in 0..canvas {
        for px in 0..canvas {
            let a = coverage(kind, cx, cy, s, px, py);
            for c in 0..3 {
                out.push(to_u8((bg[c] * (1.0 - a) + color[c] * a) as f32));
            }
        }
    }
    out
}

/// `count` videos of one translating shape each. Motion is along one axis
/// per video, constant speed, reflecting at the canvas edges so the shape
/// stays fully inside.
pub fn make_shapes(spec: &ShapesSpec, count: usize, clip_length: usize) -> Result<ClipDataset> {
    spec.validate()?;
    if clip_length == 0 || clip_length > spec.frames {
        return Err(Error::Config(format!(
            "clip length {clip_length} must lie in [1, {}]",
            spec.frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let canvas = spec.canvas as f64;
    let mut videos = Vec::with_capacity(count);
    for i in 0..count {
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        let factor = spec.factors[rng.random_range(0..spec.factors.len())];
        let s = rng.random_range(spec.size[0]..=spec.size[1]);
        let reach = if kind == ShapeKind::Diamond { 1.25 * s } else { s };
        let (lo, hi) = (reach, canvas - reach);
        let mut x = rng.random_range(lo..=hi);
        let mut y = rng.random_range(lo..=hi);
        let speed = rng.random_range(spec.speed[0]..=spec.speed[1]);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (mut vx, mut vy) = match factor {
            MotionFactor::Horizontal => (sign * speed, 0.0),
            MotionFactor::Vertical => (0.0, sign * speed),
        };
        let hue = rng.random_range(0.0..1.0);
        let color = hue_to_rgb(hue);
        let mut pixels = Vec::with_capacity(spec.frames * spec.canvas * spec.canvas * 3);
        let mut velocities = Vec::with_capacity(spec.frames.saturating_sub(1));
        for t in 0..spec.frames {
            pixels.extend(render_shape(spec.canvas, kind, x, y, s, color));
            if t + 1 == spec.frames {
                break;
            }
            let (nx, nvx) = reflect(x + vx, vx, lo, hi);
            let (ny, nvy) = reflect(y + vy, vy, lo, hi);
            velocities.push([nx - x, ny - y]);
            (x, y, vx, vy) = (nx, ny, nvx, nvy);
        }
        videos.push(StoredVideo {
            id: format!("shapes_{i:05}"),
            frames: spec.frames,
            pixels,
            meta: Some(ClipMeta { factor, kind, velocities }),
        });
    }
    ClipDataset::new(videos, clip_length, spec.canvas)
}

fn reflect(mut p: f64, mut v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if p > hi {
        p = 2.0 * hi - p;
        v = -v;
    }
    if p < lo {
        p = 2.0 * lo - p;
        v = -v;
    }
    (p.clamp(lo, hi), v)
}

/// Saturated colour in `[-1, 1]` from a hue in `[0, 1)`.
fn hue_to_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    let rgb = [f(5.0), f(3.0), f(1.0)];
    // lift towards white so every channel carries some luminance
    rgb.map(|c| (0.35 + 0.65 * c) * 2.0 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_follow_image_axes() {
        assert_eq!(flow_angle(1.0, 0.0), 0.0);
        assert_eq!(flow_angle(0.0, -1.0), 90.0);
        assert_eq!(flow_angle(-1.0, 0.0), 180.0);
        assert_eq!(flow_angle(0.0, 1.0), 270.0);
    }

    #[test]
    fn shapes_stay_inside() {
        let spec = ShapesSpec { frames: 40, ..ShapesSpec::default() };
        let ds = make_shapes(&spec, 8, 16).unwrap();
        for v in &ds.videos {
            let fl = 32 * 32 * 3;
            for t in 0..v.frames {
                let bright = v.pixels[t * fl..(t + 1) * fl].iter().filter(|&&p| p > 40).count();
                assert!(bright > 30, "shape vanished in frame {t}");
            }
        }
    }
}
