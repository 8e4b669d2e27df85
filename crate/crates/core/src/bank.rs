//! The trainable motion bank `M` and its dictionary of right singular vectors.

use motionbank_tensor::{Backward, Element, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::latent::MotionDictionary;

/// Canonicalized SVD of a square matrix, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub n: usize,
    /// Left singular vectors as columns.
    pub u: Vec<f64>,
    /// Descending.
    pub s: Vec<f64>,
    /// Right singular vectors as rows (the dictionary).
    pub vt: Vec<f64>,
}

impl Svd {
    /// `U · diag(s) · Vᵀ`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let us = self.u[r * n + k] * self.s[k];
                if us == 0.0 {
                    continue;
                }
                for c in 0..n {
                    out[r * n + c] += us * self.vt[k * n + c];
                }
            }
        }
        out
    }
}

/// SVD with deterministic orientation: every right singular vector is
/// flipped so its largest-magnitude entry (first one on ties) is positive,
/// vectors are ordered by descending singular value, and singular values
/// equal up to a relative `1e-10` are ordered by descending lexicographic
/// comparison of their vectors.
pub fn canonical_svd(n: usize, m: &[f64]) -> Result<Svd> {
    ensure_dim("motion bank", n * n, m.len())?;
    ensure_finite("motion bank", m)?;
    if n == 0 {
        return Ok(Svd { n, u: vec![], s: vec![], vt: vec![] });
    }
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let svd = mat.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::NonFinite("motion bank decomposition")),
    };
    struct Triple {
        s: f64,
        u: Vec<f64>,
        v: Vec<f64>,
    }
    let mut triples: Vec<Triple> = (0..n)
        .map(|k| {
            let mut uk: Vec<f64> = (0..n).map(|r| u[(r, k)]).collect();
            let mut vk: Vec<f64> = (0..n).map(|c| vt[(k, c)]).collect();
            let mut arg = 0;
            for (c, v) in vk.iter().enumerate() {
                if v.abs() > vk[arg].abs() {
                    arg = c;
                }
            }
            if vk[arg] < 0.0 {
                uk.iter_mut().for_each(|x| *x = -*x);
                vk.iter_mut().for_each(|x| *x = -*x);
            }
            Triple { s: svd.singular_values[k], u: uk, v: vk }
        })
        .collect();
    triples.sort_by(|a, b| b.s.total_cmp(&a.s));
    let tol = 1e-10 * triples[0].s.max(f64::MIN_POSITIVE);
    let lex_desc = |a: &Triple, b: &Triple| {
        for (x, y) in a.v.iter().zip(&b.v) {
            match y.total_cmp(x) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    };
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && triples[end - 1].s - triples[end].s <= tol {
            end += 1;
        }
        triples[start..end].sort_by(lex_desc);
        start = end;
    }
    let mut out = Svd {
        n,
        u: vec![0.0; n * n],
        s: Vec::with_capacity(n),
        vt: Vec::with_capacity(n * n),
    };
    for (k, t) in triples.iter().enumerate() {
        for r in 0..n {
            out.u[r * n + k] = t.u[r];
        }
        out.s.push(t.s);
        out.vt.extend_from_slice(&t.v);
    }
    ensure_finite("motion bank decomposition", &out.vt)?;
    Ok(out)
}

/// Backward of `M -> Vᵀ` for a full-rank square `M`:
/// `dM = U · diag(s) · (F ∘ (Vᵀ dV - dVᵀ V)) · Vᵀ`, `F_ij = 1 / (s_j² - s_i²)`.
struct RightSingularBackward {
    u: Vec<f64>,
    s: Vec<f64>,
    vt: Vec<f64>,
    f: Vec<f64>,
    n: usize,
}

impl RightSingularBackward {
    fn new(svd: &Svd) -> Self {
        let n = svd.n;
        let scale = svd.s.first().map_or(1.0, |s| s * s).max(f64::MIN_POSITIVE);
        let mut f = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let gap = svd.s[j] * svd.s[j] - svd.s[i] * svd.s[i];
                if i != j && gap.abs() > 1e-12 * scale {
                    f[i * n + j] = 1.0 / gap;
                }
            }
        }
        RightSingularBackward {
            u: svd.u.clone(),
            s: svd.s.clone(),
            vt: svd.vt.clone(),
            f,
            n,
        }
    }
}

impl<T: Element> Backward<T> for RightSingularBackward {
    fn name(&self) -> &'static str {
        "RightSingularVectors"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let n = self.n;
        let vt = Tensor::<T>::from_f64_slice(&self.vt, &[n, n]);
        let us: Vec<f64> = (0..n * n).map(|i| self.u[i] * self.s[i % n]).collect();
        let us = Tensor::<T>::from_f64_slice(&us, &[n, n]);
        let f = Tensor::<T>::from_f64_slice(&self.f, &[n, n]);
        // grad is dL/dVᵀ; with dV = gradᵀ, Vᵀ dV = (grad · V)ᵀ.
        let p = grad.matmul_t(&vt, false, true).t();
        let k = f.mul(&p.sub(&p.t()));
        vec![Some(us.matmul(&k).matmul(&vt))]
    }
}

/// Trainable `N × N` matrix plus the dictionary derived from it.
pub struct MotionBank<T: Element = f32> {
    m: Tensor<T>,
    svd: Svd,
    dictionary: MotionDictionary,
}

impl<T: Element> MotionBank<T> {
    pub fn from_matrix(n: usize, values: Vec<T>) -> Result<Self> {
        ensure_dim("motion bank", n * n, values.len())?;
        let m = Tensor::var(values, &[n, n]);
        let (svd, dictionary) = Self::decompose(&m)?;
        Ok(MotionBank { m, svd, dictionary })
    }

    /// Standard normal entries.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let values: Vec<T> = (0..n * n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        Self::from_matrix(n, values).expect("random bank is finite")
    }

    fn decompose(m: &Tensor<T>) -> Result<(Svd, MotionDictionary)> {
        let n = m.dim(0);
        let svd = canonical_svd(n, &m.to_f64_vec())?;
        let dictionary = MotionDictionary::new(n, svd.vt.clone())?;
        Ok((svd, dictionary))
    }

    pub fn n(&self) -> usize {
        self.svd.n
    }

    /// The trainable leaf.
    pub fn matrix(&self) -> &Tensor<T> {
        &self.m
    }

    /// Recomputes the cached decomposition from the current `M`.
    pub fn refresh(&mut self) -> Result<&MotionDictionary> {
        let (svd, dictionary) = Self::decompose(&self.m)?;
        self.svd = svd;
        self.dictionary = dictionary;
        Ok(&self.dictionary)
    }

    pub fn dictionary(&self) -> &MotionDictionary {
        &self.dictionary
    }

    pub fn svd(&self) -> &Svd {
        &self.svd
    }

    /// Dictionary as a tensor `[N, N]`. When `differentiable`, gradients
    /// flow back into `M` through the singular vectors; otherwise it is a
    /// constant.
    pub fn dictionary_tensor(&self, differentiable: bool) -> Tensor<T> {
        let n = self.n();
        let data: Vec<T> = self.svd.vt.iter().map(|&v| T::lit(v)).collect();
        if differentiable {
            Tensor::from_op(data, vec![n, n], vec![self.m.clone()], RightSingularBackward::new(&self.svd))
        } else {
            Tensor::from_vec(data, &[n, n])
        }
    }
}

/// Free-standing differentiable `M -> Vᵀ` (for tests and tools).
pub fn right_singular_vectors<T: Element>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let n = m.dim(0);
    let svd = canonical_svd(n, &m.to_f64_vec())?;
    let data: Vec<T> = svd.vt.iter().map(|&v| T::lit(v)).collect();
    Ok(Tensor::from_op(data, vec![n, n], vec![m.clone()], RightSingularBackward::new(&svd)))
}
