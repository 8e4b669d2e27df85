//! Latent codes, the motion dictionary contract and magnitude sequences.
//!
//! A video's latent path is `w_t = w_0 + sum_{j<t} A_j · D`, where `A_j` is
//! one row of magnitudes and `D` holds one unit direction per row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Row orthonormality tolerance accepted by [`MotionDictionary::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
    pub time_index: usize,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, time_index: usize) -> Result<Self> {
        ensure_finite("latent code", &values)?;
        Ok(LatentCode { values, time_index })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `N` orthonormal directions of length `N`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDictionary {
    n: usize,
    rows: Vec<f64>,
}

impl MotionDictionary {
    /// Validates shape, finiteness and row orthonormality.
    pub fn new(n: usize, rows: Vec<f64>) -> Result<Self> {
        ensure_dim("motion dictionary", n * n, rows.len())?;
        ensure_finite("motion dictionary", &rows)?;
        let dev = max_orthonormal_deviation(n, &rows);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(MotionDictionary { n, rows })
    }

    pub fn identity(n: usize) -> Self {
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        MotionDictionary { n, rows }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }

    pub fn max_deviation(&self) -> f64 {
        max_orthonormal_deviation(self.n, &self.rows)
    }

    /// Coordinates of `v` in the dictionary basis: `D · v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.direction(i), v)).collect()
    }
}

/// `max_ij |<d_i, d_j> - delta_ij|` over the rows of an `n × n` matrix.
pub fn max_orthonormal_deviation(n: usize, rows: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        let di = &rows[i * n..(i + 1) * n];
        for j in i..n {
            let g = dot(di, &rows[j * n..(j + 1) * n]);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-transition magnitudes: row `t` holds the magnitudes of transition `t+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSequence {
    rows: usize,
    n: usize,
    data: Vec<f64>,
}

impl MagnitudeSequence {
    pub fn new(rows: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim("magnitude sequence", rows * n, data.len())?;
        ensure_finite("magnitude sequence", &data)?;
        Ok(MagnitudeSequence { rows, n, data })
    }

    pub fn zeros(rows: usize, n: usize) -> Self {
        MagnitudeSequence {
            rows,
            n,
            data: vec![0.0; rows * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            ensure_dim("magnitude row", n, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), n, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    /// Number of frames this sequence drives.
    pub fn video_length(&self) -> usize {
        self.rows + 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.data[t * self.n + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, i)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|t| self.row(t).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionMask {
    pub active: Vec<bool>,
}

impl DirectionMask {
    pub fn all(n: usize) -> Self {
        DirectionMask { active: vec![true; n] }
    }

    pub fn none(n: usize) -> Self {
        DirectionMask { active: vec![false; n] }
    }

    /// Only the listed directions stay active.
    pub fn only(n: usize, dims: &[usize]) -> Result<Self> {
        let mut m = Self::none(n);
        for &d in dims {
            check_dim(d, n)?;
            m.active[d] = true;
        }
        Ok(m)
    }

    /// Everything except the listed directions stays active.
    pub fn without(n: usize, dims: &[usize]) -> Result<Self> {
        let mut m = Self::all(n);
        for &d in dims {
            check_dim(d, n)?;
            m.active[d] = false;
        }
        Ok(m)
    }

    pub fn is_all(&self) -> bool {
        self.active.iter().all(|&a| a)
    }
}

fn check_dim(d: usize, n: usize) -> Result<()> {
    if d < n {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("direction {d} out of range [0, {n})")))
    }
}

/// Replacement magnitudes for one direction, one value per transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Trajectory as written in a file; realized against a target length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TrajectorySpec {
    /// `offset + slope · t`
    Linear {
        dim: usize,
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude · sin(2π t / period + phase)`
    Sinusoid {
        dim: usize,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    Explicit { dim: usize, values: Vec<f64> },
}

impl TrajectorySpec {
    pub fn dim(&self) -> usize {
        match self {
            TrajectorySpec::Linear { dim, .. }
            | TrajectorySpec::Sinusoid { dim, .. }
            | TrajectorySpec::Explicit { dim, .. } => *dim,
        }
    }

    pub fn realize(&self, len: usize) -> Result<Trajectory> {
        let values = match self {
            TrajectorySpec::Linear { slope, offset, .. } => {
                (0..len).map(|t| offset + slope * t as f64).collect()
            }
            TrajectorySpec::Sinusoid {
                amplitude,
                period,
                phase,
                ..
            } => {
                if !(*period != 0.0 && period.is_finite()) {
                    return Err(Error::InvalidArgument("sinusoid period must be nonzero".into()));
                }
                (0..len)
                    .map(|t| amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                    .collect()
            }
            TrajectorySpec::Explicit { values, .. } => {
                if values.len() != len {
                    return Err(Error::InvalidArgument(format!(
                        "explicit trajectory has {} values, expected {len}",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        ensure_finite("trajectory", &values)?;
        Ok(Trajectory {
            dim: self.dim(),
            values,
        })
    }
}

#[derive(Debug, Deserialize)]
struct TrajectoryFile {
    trajectory: Vec<TrajectorySpec>,
}

/// Reads trajectory specs from a TOML file (`[[trajectory]]` tables) or a
/// JSON file (an array of specs, or `{"trajectory": [...]}`).
pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectorySpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_trajectories(&text, path.extension().and_then(|e| e.to_str()) == Some("json"))
}

pub fn parse_trajectories(text: &str, json: bool) -> Result<Vec<TrajectorySpec>> {
    if json {
        if let Ok(list) = serde_json::from_str::<Vec<TrajectorySpec>>(text) {
            return Ok(list);
        }
        let f: TrajectoryFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(f.trajectory)
    } else {
        let f: TrajectoryFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(f.trajectory)
    }
}

/// One transition: `w_t + sum_i A_t[i] · d_i`.
pub fn lmd_step(w: &LatentCode, a: &[f64], d: &MotionDictionary) -> Result<LatentCode> {
    ensure_dim("lmd_step latent", d.len(), w.dim())?;
    ensure_dim("lmd_step magnitudes", d.len(), a.len())?;
    ensure_finite("lmd_step magnitudes", a)?;
    let mut out = w.values.clone();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (o, &dij) in out.iter_mut().zip(d.direction(i)) {
                *o += ai * dij;
            }
        }
    }
    Ok(LatentCode {
        values: out,
        time_index: w.time_index + 1,
    })
}

/// Closed-form latent path of length `rows(alphas) + 1`: running sums of the
/// magnitude rows, then a single product with the dictionary.
pub fn lmd_sequence(w0: &LatentCode, alphas: &MagnitudeSequence, d: &MotionDictionary) -> Result<Vec<LatentCode>> {
    let n = d.len();
    ensure_dim("lmd_sequence latent", n, w0.dim())?;
    ensure_finite("lmd_sequence latent", &w0.values)?;
    if alphas.rows() > 0 {
        ensure_dim("lmd_sequence magnitudes", n, alphas.dims())?;
    }
    let t_len = alphas.rows() + 1;
    let mut cum = vec![0.0; t_len * n];
    for t in 1..t_len {
        let (prev, cur) = cum.split_at_mut(t * n);
        let prev = &prev[(t - 1) * n..];
        for ((c, p), a) in cur[..n].iter_mut().zip(prev).zip(alphas.row(t - 1)) {
            *c = p + a;
        }
    }
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut w = w0.values.clone();
        let c = &cum[t * n..(t + 1) * n];
        for (i, &ci) in c.iter().enumerate() {
            if ci != 0.0 {
                for (o, &dij) in w.iter_mut().zip(d.direction(i)) {
                    *o += ci * dij;
                }
            }
        }
        out.push(LatentCode {
            values: w,
            time_index: w0.time_index + t,
        });
    }
    Ok(out)
}

pub fn apply_direction_mask(alphas: &MagnitudeSequence, mask: &DirectionMask) -> Result<MagnitudeSequence> {
    ensure_dim("direction mask", alphas.dims(), mask.active.len())?;
    let mut out = alphas.clone();
    for t in 0..out.rows {
        for (i, &on) in mask.active.iter().enumerate() {
            if !on {
                out.data[t * out.n + i] = 0.0;
            }
        }
    }
    Ok(out)
}

pub fn inject_trajectory(alphas: &MagnitudeSequence, traj: &Trajectory) -> Result<MagnitudeSequence> {
    check_dim(traj.dim, alphas.dims())?;
    ensure_dim("trajectory length", alphas.rows(), traj.values.len())?;
    ensure_finite("trajectory", &traj.values)?;
    let mut out = alphas.clone();
    for (t, &v) in traj.values.iter().enumerate() {
        out.data[t * out.n + traj.dim] = v;
    }
    Ok(out)
}

/// Mask first, then trajectories in order.
pub fn apply_controls(alphas: &MagnitudeSequence, mask: &DirectionMask, trajectories: &[Trajectory]) -> Result<MagnitudeSequence> {
    let mut out = apply_direction_mask(alphas, mask)?;
    for traj in trajectories {
        out = inject_trajectory(&out, traj)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_magnitudes_are_identity() {
        let d = MotionDictionary::identity(4);
        let w = LatentCode::new(vec![1.0, -2.0, 3.0, 0.5], 3).unwrap();
        let next = lmd_step(&w, &[0.0; 4], &d).unwrap();
        assert_eq!(next.values, w.values);
        assert_eq!(next.time_index, 4);
    }

    #[test]
    fn canonical_basis_step() {
        let d = MotionDictionary::identity(4);
        let w = LatentCode::new(vec![1.0, 1.0, 1.0, 1.0], 0).unwrap();
        let next = lmd_step(&w, &[0.0, 0.0, 2.5, 0.0], &d).unwrap();
        assert_eq!(next.values, vec![1.0, 1.0, 3.5, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let d = MotionDictionary::identity(4);
        let w = LatentCode::new(vec![0.0; 3], 0).unwrap();
        assert!(matches!(lmd_step(&w, &[0.0; 4], &d), Err(Error::Dimension { .. })));
    }

    #[test]
    fn empty_sequence_returns_start() {
        let d = MotionDictionary::identity(3);
        let w = LatentCode::new(vec![1.0, 2.0, 3.0], 0).unwrap();
        let seq = lmd_sequence(&w, &MagnitudeSequence::zeros(0, 3), &d).unwrap();
        assert_eq!(seq, vec![w]);
    }

    #[test]
    fn linear_drift() {
        let d = MotionDictionary::identity(3);
        let w = LatentCode::new(vec![0.0, 1.0, 0.0], 0).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![0.0, 0.0, 0.25]).collect();
        let seq = lmd_sequence(&w, &MagnitudeSequence::from_rows(&rows).unwrap(), &d).unwrap();
        for (t, code) in seq.iter().enumerate() {
            assert_eq!(code.values, vec![0.0, 1.0, 0.25 * t as f64]);
            assert_eq!(code.time_index, t);
        }
    }

    #[test]
    fn nan_is_rejected() {
        assert!(MagnitudeSequence::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(LatentCode::new(vec![f64::INFINITY], 0).is_err());
    }

    #[test]
    fn non_orthonormal_dictionary_is_rejected() {
        assert!(matches!(
            MotionDictionary::new(2, vec![1.0, 0.0, 1.0, 0.0]),
            Err(Error::NotOrthonormal(_))
        ));
    }

    #[test]
    fn trajectory_specs_realize() {
        let lin = TrajectorySpec::Linear { dim: 1, slope: 1.0, offset: 0.0 }.realize(4).unwrap();
        assert_eq!(lin.values, vec![0.0, 1.0, 2.0, 3.0]);
        let sin = TrajectorySpec::Sinusoid { dim: 0, amplitude: 2.0, period: 4.0, phase: 0.0 }
            .realize(3)
            .unwrap();
        assert!((sin.values[1] - 2.0).abs() < 1e-12);
        assert!(TrajectorySpec::Explicit { dim: 0, values: vec![1.0] }.realize(2).is_err());
    }

    #[test]
    fn trajectory_file_formats() {
        let toml_text = r#"
            [[trajectory]]
            type = "linear"
            dim = 1
            slope = 0.5

            [[trajectory]]
            type = "explicit"
            dim = 3
            values = [1.0, 2.0]
        "#;
        let specs = parse_trajectories(toml_text, false).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0], TrajectorySpec::Linear { dim: 1, slope: 0.5, offset: 0.0 });
        let json_text = r#"[{"type": "sinusoid", "dim": 7, "amplitude": 1.0, "period": 8.0}]"#;
        let specs = parse_trajectories(json_text, true).unwrap();
        assert_eq!(specs[0].dim(), 7);
    }
}
