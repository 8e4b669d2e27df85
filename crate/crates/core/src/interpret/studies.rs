//! Statistics and intervention studies on a trained generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, NoiseBundle};
use crate::interpret::colorwheel::{magnitude_quantile, quantize_masked, ColorwheelConfig, FlowQuantization};
use crate::interpret::flow::{estimate_flow, FlowEstimator, FlowField};
use crate::latent::DirectionMask;
use crate::noise::sample_seeds;
use crate::tensor::{no_grad, Tensor};
use crate::video::VideoTensor;

/// Noise bundle of sample `index` of the evaluation set `base_seed`.
pub fn eval_bundle(gen: &Generator<f32>, base_seed: u64, index: usize, length: usize) -> Result<NoiseBundle> {
    let (a, m) = sample_seeds(base_seed, index as u64);
    NoiseBundle::from_seeds(gen.config(), a, m, length)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub samples: usize,
    pub timesteps: usize,
    /// Per direction, over all timesteps of all samples.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Per timestep and direction, over samples: `[t][i]`.
    pub mean_over_time: Vec<Vec<f64>>,
}

impl AlphaStats {
    /// Direction indices by decreasing variance (ties to the lower index).
    pub fn top_by_variance(&self, k: usize) -> Vec<usize> {
        rank(&self.variance, k)
    }

    /// Direction indices by decreasing `|mean|`.
    pub fn top_by_mean(&self, k: usize) -> Vec<usize> {
        rank(&self.mean.iter().map(|m| m.abs()).collect::<Vec<_>>(), k)
    }
}

fn rank(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Magnitude statistics over `num_samples` videos of `length` frames.
pub fn alpha_stats(gen: &Generator<f32>, num_samples: usize, base_seed: u64, length: usize) -> Result<AlphaStats> {
    if num_samples < 1 {
        return Err(Error::InvalidArgument("alpha_stats needs at least one sample".into()));
    }
    if length < 2 {
        return Err(Error::InvalidArgument("alpha_stats needs videos of at least 2 frames".into()));
    }
    let cfg = gen.config();
    let (n, steps) = (cfg.n, length - 1);
    let mut sum = vec![0.0f64; n];
    let mut time_sum = vec![vec![0.0f64; n]; steps];
    let mut sq = vec![0.0f64; n];
    let _g = no_grad();
    let chunk = 256;
    for start in (0..num_samples).step_by(chunk) {
        let stop = (start + chunk).min(num_samples);
        let mut za = Vec::new();
        let mut zm = Vec::new();
        for i in start..stop {
            let b = eval_bundle(gen, base_seed, i, length)?;
            za.extend(b.z_a);
            b.z_m.into_iter().for_each(|r| zm.extend(r));
        }
        let bsz = stop - start;
        let za = Tensor::<f32>::from_f64_slice(&za, &[bsz, cfg.dim_za]);
        let zm = Tensor::<f32>::from_f64_slice(&zm, &[bsz, steps, cfg.dim_zm]);
        let alphas = gen.motion_forward(&za, &zm).to_f64_vec();
        for (row, a) in alphas.chunks(n).enumerate() {
            let t = row % steps;
            for i in 0..n {
                sum[i] += a[i];
                time_sum[t][i] += a[i];
                sq[i] += a[i] * a[i];
            }
        }
    }
    let count = (num_samples * steps) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let variance = sq.iter().zip(&mean).map(|(q, m)| (q / count - m * m).max(0.0)).collect();
    let mean_over_time = time_sum
        .into_iter()
        .map(|r| r.into_iter().map(|s| s / num_samples as f64).collect())
        .collect();
    Ok(AlphaStats {
        samples: num_samples,
        timesteps: steps,
        mean,
        variance,
        mean_over_time,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub num_videos: usize,
    pub base_seed: u64,
    pub length: usize,
    pub colorwheel: ColorwheelConfig,
    /// When absent, the 0.99 quantile of above-threshold magnitudes over
    /// all flows of the study.
    pub h_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeactivationRow {
    pub direction: usize,
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
    pub total: f64,
    pub delta_total: f64,
}

impl DeactivationRow {
    /// Opposite pair holding the largest share of `Σ|Δφ|`, with that share.
    pub fn dominant_pair(&self, pairs: &[(usize, usize)]) -> Option<(usize, f64)> {
        let mass: f64 = self.delta.iter().map(|d| d.abs()).sum();
        if mass <= 0.0 {
            return None;
        }
        pairs
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| (k, (self.delta[a].abs() + self.delta[b].abs()) / mass))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeactivationTable {
    pub videos: usize,
    pub h_norm: f64,
    pub phi_original: Vec<f64>,
    pub total_original: f64,
    pub rows: Vec<DeactivationRow>,
}

fn mean_phi(qs: &[FlowQuantization], bins: usize) -> (Vec<f64>, f64) {
    let mut phi = vec![0.0; bins];
    let mut total = 0.0;
    for q in qs {
        for (p, v) in phi.iter_mut().zip(&q.phi) {
            *p += v;
        }
        total += q.total;
    }
    let n = qs.len().max(1) as f64;
    (phi.into_iter().map(|p| p / n).collect(), total / n)
}

fn check_directions(gen: &Generator<f32>, directions: &[usize]) -> Result<()> {
    let n = gen.config().n;
    match directions.iter().find(|&&d| d >= n) {
        Some(d) => Err(Error::InvalidArgument(format!("direction {d} out of range [0, {n})"))),
        None => Ok(()),
    }
}

/// Flows of the original videos and of each single-direction deactivation,
/// `[variant][video]` with variant 0 the original.
fn study_flows(
    gen: &Generator<f32>,
    directions: &[usize],
    cfg: &StudyConfig,
    estimator: &dyn FlowEstimator,
) -> Result<Vec<Vec<FlowField>>> {
    if cfg.num_videos < 1 {
        return Err(Error::InvalidArgument("study needs at least one video".into()));
    }
    check_directions(gen, directions)?;
    let n = gen.config().n;
    let mut masks = vec![DirectionMask::all(n)];
    for &d in directions {
        masks.push(DirectionMask::without(n, &[d])?);
    }
    let mut flows = vec![Vec::with_capacity(cfg.num_videos); masks.len()];
    for i in 0..cfg.num_videos {
        let bundle = eval_bundle(gen, cfg.base_seed, i, cfg.length)?;
        for (m, out) in masks.iter().zip(flows.iter_mut()) {
            let video = gen.generate_controlled(&bundle, m, &[])?.video;
            out.push(estimate_flow(&video, estimator)?);
        }
    }
    Ok(flows)
}

fn resolve_h_norm(flows: &[Vec<FlowField>], cfg: &StudyConfig) -> f64 {
    cfg.h_norm.unwrap_or_else(|| {
        magnitude_quantile(flows.iter().flatten(), cfg.colorwheel.epsilon, 0.99)
            .filter(|h| *h > 0.0)
            .unwrap_or(1.0)
    })
}

/// `Δφ_i = mean φ_i(direction off) − mean φ_i(original)` over shared noise.
pub fn deactivation_study(
    gen: &Generator<f32>,
    directions: &[usize],
    cfg: &StudyConfig,
    estimator: &dyn FlowEstimator,
) -> Result<DeactivationTable> {
    let flows = study_flows(gen, directions, cfg, estimator)?;
    let h_norm = resolve_h_norm(&flows, cfg);
    let wheel = cfg.colorwheel.clone().with_h_norm(h_norm);
    let bins = wheel.bins.len();
    let mut means = Vec::new();
    for variant in &flows {
        let qs = variant
            .iter()
            .map(|f| quantize_masked(f, &wheel, None))
            .collect::<Result<Vec<_>>>()?;
        means.push(mean_phi(&qs, bins));
    }
    let (phi0, total0) = means[0].clone();
    let rows = directions
        .iter()
        .zip(&means[1..])
        .map(|(&d, (phi, total))| DeactivationRow {
            direction: d,
            delta: phi.iter().zip(&phi0).map(|(a, b)| a - b).collect(),
            phi: phi.clone(),
            total: *total,
            delta_total: total - total0,
        })
        .collect();
    Ok(DeactivationTable {
        videos: cfg.num_videos,
        h_norm,
        phi_original: phi0,
        total_original: total0,
        rows,
    })
}

/// A named pixel mask, either one map for every frame or one per flow pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub name: String,
    pub frames: Vec<Vec<bool>>,
}

impl RegionMask {
    pub fn full(name: &str, height: usize, width: usize) -> Self {
        RegionMask {
            name: name.into(),
            frames: vec![vec![true; height * width]],
        }
    }

    /// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
    pub fn rect(name: &str, height: usize, width: usize, x: (usize, usize), y: (usize, usize)) -> Self {
        let m = (0..height * width)
            .map(|p| {
                let (py, px) = (p / width, p % width);
                px >= x.0 && px < x.1 && py >= y.0 && py < y.1
            })
            .collect();
        RegionMask {
            name: name.into(),
            frames: vec![m],
        }
    }

    pub fn for_pairs(&self, pairs: usize, pixels: usize) -> Result<Vec<Vec<bool>>> {
        if self.frames.is_empty() || self.frames.iter().any(|f| f.len() != pixels) {
            return Err(Error::InvalidArgument(format!(
                "mask {} must have {pixels} pixels per frame",
                self.name
            )));
        }
        if self.frames.iter().all(|f| !f.iter().any(|&b| b)) {
            return Err(Error::InvalidArgument(format!("mask {} is empty", self.name)));
        }
        match self.frames.len() {
            1 => Ok(vec![self.frames[0].clone(); pairs]),
            n if n >= pairs => Ok(self.frames[..pairs].to_vec()),
            n => Err(Error::InvalidArgument(format!(
                "mask {} has {n} frames, need 1 or at least {pairs}",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub direction: usize,
    /// `ΔΦ` per region.
    pub delta: Vec<f64>,
    /// `ΔΦ_a − ΔΦ_b` for every ordered region pair `a > b`.
    pub differences: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub regions: Vec<String>,
    pub h_norm: f64,
    pub total_original: Vec<f64>,
    pub rows: Vec<RegionRow>,
}

/// Total motion restricted to each mask, and its change per deactivated
/// direction.
pub fn region_motion(
    gen: &Generator<f32>,
    directions: &[usize],
    masks: &[RegionMask],
    cfg: &StudyConfig,
    estimator: &dyn FlowEstimator,
) -> Result<RegionTable> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("region study needs at least one mask".into()));
    }
    let c = gen.config();
    let pixels = c.resolution * c.resolution;
    let pairs = cfg.length.saturating_sub(1);
    let expanded = masks
        .iter()
        .map(|m| m.for_pairs(pairs, pixels))
        .collect::<Result<Vec<_>>>()?;
    let flows = study_flows(gen, directions, cfg, estimator)?;
    let h_norm = resolve_h_norm(&flows, cfg);
    let wheel = cfg.colorwheel.clone().with_h_norm(h_norm);
    // totals[variant][region]
    let mut totals = Vec::new();
    for variant in &flows {
        let mut per_region = Vec::new();
        for m in &expanded {
            let mut acc = 0.0;
            for f in variant {
                acc += quantize_masked(f, &wheel, Some(m))?.total;
            }
            per_region.push(acc / variant.len() as f64);
        }
        totals.push(per_region);
    }
    let rows = directions
        .iter()
        .zip(&totals[1..])
        .map(|(&d, t)| {
            let delta: Vec<f64> = t.iter().zip(&totals[0]).map(|(a, b)| a - b).collect();
            let mut differences = Vec::new();
            for a in 0..masks.len() {
                for b in 0..a {
                    differences.push((format!("{}-{}", masks[a].name, masks[b].name), delta[a] - delta[b]));
                }
            }
            RegionRow {
                direction: d,
                delta,
                differences,
            }
        })
        .collect();
    Ok(RegionTable {
        regions: masks.iter().map(|m| m.name.clone()).collect(),
        h_norm,
        total_original: totals[0].clone(),
        rows,
    })
}

/// Videos along the straight line between two appearance noises, all
/// sharing the motion and synthesis noise of `bundle`.
pub fn interpolate_appearance(
    gen: &Generator<f32>,
    z_a0: &[f64],
    z_a1: &[f64],
    steps: usize,
    bundle: &NoiseBundle,
) -> Result<Vec<VideoTensor>> {
    if steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs at least 2 steps".into()));
    }
    if z_a0.len() != z_a1.len() {
        return Err(Error::Dimension {
            context: "appearance endpoints",
            expected: z_a0.len(),
            got: z_a1.len(),
        });
    }
    (0..steps)
        .map(|k| {
            let s = k as f64 / (steps - 1) as f64;
            let z: Vec<f64> = z_a0.iter().zip(z_a1).map(|(a, b)| (1.0 - s) * a + s * b).collect();
            Ok(gen.generate_video(&bundle.with_appearance(z))?.video)
        })
        .collect()
}
