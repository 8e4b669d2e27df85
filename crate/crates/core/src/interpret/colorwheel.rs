//! Angular binning of flow and per-bin motion strength.

use serde::{Deserialize, Serialize};

use crate::data::flow_angle;
use crate::error::{Error, Result};
use crate::interpret::flow::FlowField;

/// Half-open angular interval `[start, end)` in degrees; wraps through 0
/// when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleBin {
    pub start: f64,
    pub end: f64,
}

impl AngleBin {
    pub fn contains(&self, angle: f64) -> bool {
        if self.start <= self.end {
            angle >= self.start && angle < self.end
        } else {
            angle >= self.start || angle < self.end
        }
    }

    pub fn width(&self) -> f64 {
        if self.start <= self.end {
            self.end - self.start
        } else {
            360.0 - self.start + self.end
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorwheelConfig {
    pub bins: Vec<AngleBin>,
    /// Magnitude (px/frame) that maps to full strength.
    pub h_norm: f64,
    /// Pixels at or below this magnitude carry no motion.
    pub epsilon: f64,
    pub opposite_pairs: Vec<(usize, usize)>,
}

impl Default for ColorwheelConfig {
    /// Up, left, right, down.
    fn default() -> Self {
        ColorwheelConfig {
            bins: vec![
                AngleBin { start: 45.0, end: 135.0 },
                AngleBin { start: 135.0, end: 225.0 },
                AngleBin { start: 315.0, end: 45.0 },
                AngleBin { start: 225.0, end: 315.0 },
            ],
            h_norm: 2.0,
            epsilon: 0.1,
            opposite_pairs: vec![(0, 3), (1, 2)],
        }
    }
}

impl ColorwheelConfig {
    pub fn with_h_norm(mut self, h_norm: f64) -> Self {
        self.h_norm = h_norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_norm > 0.0 && self.h_norm.is_finite()) {
            return Err(Error::Config(format!("h_norm must be positive, got {}", self.h_norm)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.bins.is_empty() {
            return Err(Error::Config("colorwheel needs at least one bin".into()));
        }
        for b in &self.bins {
            if !(0.0..360.0).contains(&b.start) || !(0.0..=360.0).contains(&b.end) || b.start == b.end {
                return Err(Error::Config(format!("bad bin {b:?}")));
            }
        }
        // every elementary arc between consecutive boundaries must be covered once
        let mut cuts: Vec<f64> = self.bins.iter().flat_map(|b| [b.start, b.end % 360.0]).collect();
        cuts.push(0.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for (i, &lo) in cuts.iter().enumerate() {
            let hi = cuts.get(i + 1).copied().unwrap_or(360.0);
            let mid = 0.5 * (lo + hi);
            let hits = self.bins.iter().filter(|b| b.contains(mid)).count();
            if hits != 1 {
                return Err(Error::Config(format!("bins cover angle {mid} {hits} times")));
            }
        }
        for &(a, b) in &self.opposite_pairs {
            if a >= self.bins.len() || b >= self.bins.len() || a == b {
                return Err(Error::Config(format!("bad opposite pair ({a}, {b})")));
            }
        }
        Ok(())
    }

    /// Bin index of an angle in `[0, 360)`.
    pub fn bin_of(&self, angle: f64) -> usize {
        self.bins
            .iter()
            .position(|b| b.contains(angle))
            .expect("validated bins partition the circle")
    }
}

/// Per-bin strengths of one flow video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowQuantization {
    /// Mean normalized magnitude over the pixels in each bin.
    pub phi: Vec<f64>,
    /// Mean normalized magnitude over all pixels above threshold.
    pub total: f64,
    pub counts: Vec<usize>,
    pub n: usize,
    /// Bins without pixels; their `phi` is reported as 0.
    pub empty: Vec<bool>,
}

/// `phi_i = Σ min(|f|/H, 1) / N_i` over the above-threshold pixels in bin i,
/// `total = Σ_i Σ min(|f|/H, 1) / N`.
pub fn quantize_flow(flow: &FlowField, cfg: &ColorwheelConfig) -> Result<FlowQuantization> {
    quantize_masked(flow, cfg, None)
}

/// As [`quantize_flow`], counting only pixels where `mask[pair][pixel]`.
pub fn quantize_masked(flow: &FlowField, cfg: &ColorwheelConfig, mask: Option<&[Vec<bool>]>) -> Result<FlowQuantization> {
    cfg.validate()?;
    if let Some(m) = mask {
        if m.len() != flow.pairs {
            return Err(Error::Dimension {
                context: "mask frames",
                expected: flow.pairs,
                got: m.len(),
            });
        }
        for fm in m {
            if fm.len() != flow.pixels_per_pair() {
                return Err(Error::Dimension {
                    context: "mask pixels",
                    expected: flow.pixels_per_pair(),
                    got: fm.len(),
                });
            }
        }
    }
    let k = cfg.bins.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let per = flow.pixels_per_pair();
    for (i, (u, v)) in flow.vectors().enumerate() {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::NonFinite("flow vector"));
        }
        if let Some(m) = mask {
            if !m[i / per][i % per] {
                continue;
            }
        }
        let mag = (u * u + v * v).sqrt();
        if mag <= cfg.epsilon {
            continue;
        }
        let b = cfg.bin_of(flow_angle(u, v));
        sums[b] += (mag / cfg.h_norm).min(1.0);
        counts[b] += 1;
    }
    let n: usize = counts.iter().sum();
    let phi = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let mut all = 0.0;
    for s in &sums {
        all += s;
    }
    Ok(FlowQuantization {
        phi,
        total: if n == 0 { 0.0 } else { all / n as f64 },
        empty: counts.iter().map(|&c| c == 0).collect(),
        counts,
        n,
    })
}

/// `q`-quantile (0..=1, nearest rank) of the above-threshold magnitudes of
/// `flows`; `None` when no pixel passes.
pub fn magnitude_quantile<'a>(flows: impl IntoIterator<Item = &'a FlowField>, epsilon: f64, q: f64) -> Option<f64> {
    let mut mags: Vec<f64> = flows
        .into_iter()
        .flat_map(|f| f.vectors().map(|(u, v)| (u * u + v * v).sqrt()))
        .filter(|&m| m > epsilon)
        .collect();
    if mags.is_empty() {
        return None;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    Some(mags[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bins_partition() {
        let c = ColorwheelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.bins.iter().map(AngleBin::width).sum::<f64>(), 360.0);
        assert_eq!(c.bin_of(90.0), 0);
        assert_eq!(c.bin_of(180.0), 1);
        assert_eq!(c.bin_of(0.0), 2);
        assert_eq!(c.bin_of(270.0), 3);
    }

    #[test]
    fn overlapping_bins_are_rejected() {
        let mut c = ColorwheelConfig::default();
        c.bins[0].end = 150.0;
        assert!(c.validate().is_err());
    }
}
