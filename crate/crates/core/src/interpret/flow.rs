//! Dense optical flow between consecutive frames.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::{Frame, VideoTensor};

/// Flow for `pairs = T - 1` transitions, stored `[pair][y][x][(u, v)]`
/// with `u` rightward and `v` downward in px/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FlowField {
    pub fn new(pairs: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != pairs * height * width * 2 {
            return Err(Error::Dimension {
                context: "flow field",
                expected: pairs * height * width * 2,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(FlowField {
            pairs,
            height,
            width,
            data,
        })
    }

    pub fn zeros(pairs: usize, height: usize, width: usize) -> Self {
        FlowField {
            pairs,
            height,
            width,
            data: vec![0.0; pairs * height * width * 2],
        }
    }

    /// Same vector at every pixel of every pair.
    pub fn uniform(pairs: usize, height: usize, width: usize, u: f64, v: f64) -> Self {
        let data = (0..pairs * height * width).flat_map(|_| [u as f32, v as f32]).collect();
        FlowField {
            pairs,
            height,
            width,
            data,
        }
    }

    pub fn pixels_per_pair(&self) -> usize {
        self.height * self.width
    }

    pub fn vector(&self, pair: usize, y: usize, x: usize) -> (f64, f64) {
        let i = ((pair * self.height + y) * self.width + x) * 2;
        (self.data[i] as f64, self.data[i + 1] as f64)
    }

    /// Iterates `(u, v)` over every pixel of every pair in storage order.
    pub fn vectors(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.data.chunks_exact(2).map(|c| (c[0] as f64, c[1] as f64))
    }

    pub fn pair_slice(&self, pair: usize) -> &[f32] {
        let n = self.height * self.width * 2;
        &self.data[pair * n..(pair + 1) * n]
    }

    /// Writes one pair in the Middlebury `.flo` layout.
    pub fn write_flo(&self, pair: usize, path: &Path) -> Result<()> {
        if pair >= self.pairs {
            return Err(Error::InvalidArgument(format!("pair {pair} out of range ({} pairs)", self.pairs)));
        }
        let mut out = Vec::with_capacity(12 + self.height * self.width * 8);
        out.extend_from_slice(&202021.25f32.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for v in self.pair_slice(pair) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_flo(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
        if bytes.len() < 12 || f32::from_le_bytes(bytes[0..4].try_into().unwrap()) != 202021.25 {
            return Err(bad("not a .flo file"));
        }
        let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if w <= 0 || h <= 0 || bytes.len() != 12 + (w as usize) * (h as usize) * 8 {
            return Err(bad("bad dimensions"));
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FlowField::new(1, h as usize, w as usize, data)
    }
}

/// Estimates flow from frame `a` to frame `b`: `b(x + u, y + v) ≈ a(x, y)`.
pub trait FlowEstimator: Send + Sync {
    fn name(&self) -> &str;
    /// `[y][x][(u, v)]` for one pair of equally sized frames.
    fn estimate_pair(&self, a: &Frame, b: &Frame) -> Vec<f32>;
}

/// Exhaustive block matching on RGB squared differences.
///
/// Each pixel compares the `block × block` window around it (clipped at the
/// borders) against every integer displacement within `radius`; the target
/// frame is edge-extended. Displacements whose cost is within `tie_tolerance`
/// (mean squared difference per sample) of the best lose to zero, and exact
/// ties go to the shorter displacement. Unless the match is already within
/// `tie_tolerance`, a parabola through the neighbouring costs refines each
/// axis to subpixel precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatching {
    pub block: usize,
    pub radius: usize,
    pub tie_tolerance: f64,
    pub subpixel: bool,
}

impl Default for BlockMatching {
    fn default() -> Self {
        BlockMatching {
            block: 8,
            radius: 4,
            tie_tolerance: 1e-4,
            subpixel: true,
        }
    }
}

impl BlockMatching {
    /// Displacements in preference order: shorter first, then by `(dy, dx)`.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut v: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
        v.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        v
    }

    /// Window rows/cols `[lo, hi)` around `c`.
    pub fn window(&self, c: usize, extent: usize) -> (usize, usize) {
        let half = self.block / 2;
        let lo = c.saturating_sub(half);
        let hi = (c + self.block - half).min(extent);
        (lo, hi)
    }

    /// Picks the displacement from per-offset costs (ordered as
    /// [`offsets`](Self::offsets)) and returns the refined vector. `grid`
    /// maps row-major `(dy, dx)` cells to offset order.
    fn select(&self, offsets: &[(isize, isize)], grid: &[usize], costs: &[f64], samples: usize) -> (f64, f64) {
        let mut best = 0;
        for i in 1..costs.len() {
            if costs[i] < costs[best] {
                best = i;
            }
        }
        // offsets[0] is the zero displacement
        if costs[0] <= costs[best] + self.tie_tolerance * samples as f64 {
            best = 0;
        }
        let (dx, dy) = offsets[best];
        // a (near) perfect integer match is taken as exact; fitting a
        // parabola there turns static texture into sub-pixel jitter
        if !self.subpixel || costs[best] <= self.tie_tolerance * samples as f64 {
            return (dx as f64, dy as f64);
        }
        let r = self.radius as isize;
        let side = (2 * r + 1) as usize;
        let at = |x: isize, y: isize| -> f64 {
            let idx = ((y + r) as usize) * side + (x + r) as usize;
            costs[grid[idx]]
        };
        let c0 = costs[best];
        let refine = |cm: f64, cp: f64| -> f64 {
            let den = cm - 2.0 * c0 + cp;
            if den > 0.0 {
                (0.5 * (cm - cp) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        let sx = if dx > -r && dx < r { refine(at(dx - 1, dy), at(dx + 1, dy)) } else { 0.0 };
        let sy = if dy > -r && dy < r { refine(at(dx, dy - 1), at(dx, dy + 1)) } else { 0.0 };
        (dx as f64 + sx, dy as f64 + sy)
    }

    fn grid_to_order(&self) -> Vec<usize> {
        let r = self.radius as isize;
        let side = (2 * r + 1) as usize;
        let mut map = vec![0; side * side];
        for (i, &(dx, dy)) in self.offsets().iter().enumerate() {
            map[((dy + r) as usize) * side + (dx + r) as usize] = i;
        }
        map
    }
}

impl FlowEstimator for BlockMatching {
    fn name(&self) -> &str {
        "block-matching"
    }

    fn estimate_pair(&self, a: &Frame, b: &Frame) -> Vec<f32> {
        assert_eq!((a.height, a.width), (b.height, b.width), "flow frames differ in size");
        let (h, w) = (a.height, a.width);
        let offsets = self.offsets();
        let grid = self.grid_to_order();
        // costs[pixel][offset]
        let mut costs = vec![0.0f64; h * w * offsets.len()];
        let mut diff = vec![0.0f64; h * w];
        let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
        for (oi, &(dx, dy)) in offsets.iter().enumerate() {
            for y in 0..h {
                let ty = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for x in 0..w {
                    let tx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let pa = &a.data[(y * w + x) * 3..(y * w + x) * 3 + 3];
                    let pb = &b.data[(ty * w + tx) * 3..(ty * w + tx) * 3 + 3];
                    let mut s = 0.0;
                    for c in 0..3 {
                        let d = pb[c] as f64 - pa[c] as f64;
                        s += d * d;
                    }
                    diff[y * w + x] = s;
                }
            }
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += diff[y * w + x];
                    integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
                }
            }
            for y in 0..h {
                let (y0, y1) = self.window(y, h);
                for x in 0..w {
                    let (x0, x1) = self.window(x, w);
                    let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                        + integral[y0 * (w + 1) + x0];
                    costs[(y * w + x) * offsets.len() + oi] = s.max(0.0);
                }
            }
        }
        let mut out = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            let (y0, y1) = self.window(y, h);
            for x in 0..w {
                let (x0, x1) = self.window(x, w);
                let samples = (y1 - y0) * (x1 - x0) * 3;
                let c = &costs[(y * w + x) * offsets.len()..(y * w + x + 1) * offsets.len()];
                let (u, v) = self.select(&offsets, &grid, c, samples);
                out.push(u as f32);
                out.push(v as f32);
            }
        }
        out
    }
}

/// Flow for every consecutive pair of `video`.
pub fn estimate_flow(video: &VideoTensor, estimator: &dyn FlowEstimator) -> Result<FlowField> {
    if video.frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "flow needs at least 2 frames, got {}",
            video.frames
        )));
    }
    let mut data = Vec::with_capacity((video.frames - 1) * video.height * video.width * 2);
    let mut prev = video.frame(0);
    for t in 1..video.frames {
        let next = video.frame(t);
        data.extend(estimator.estimate_pair(&prev, &next));
        prev = next;
    }
    FlowField::new(video.frames - 1, video.height, video.width, data)
}
