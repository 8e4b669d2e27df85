//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal load added to covariances that are not positive definite.
pub const COV_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Whether the diagonal load was added.
    pub regularized: bool,
}

/// Sample mean and unbiased covariance of row vectors.
pub fn mean_cov(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument("empty feature vectors".into()));
    }
    let n = features.len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::Dimension {
                context: "feature vector",
                expected: d,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        x.row_mut(i).copy_from_slice(f);
    }
    let mu = x.row_mean().transpose();
    for mut r in x.row_iter_mut() {
        r -= mu.transpose();
    }
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    Ok((mu, cov))
}

/// Symmetric PSD square root with negative eigenvalues clamped to 0.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// `||μ_a − μ_b||² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})` from precomputed
/// statistics. The trace of the product root is taken through the
/// symmetric form `(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`.
pub fn frechet_from_stats(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<FrechetResult> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::Dimension {
            context: "Fréchet statistics",
            expected: d,
            got: mu_b.len(),
        });
    }
    let tiny = 1e-12 * (1.0 + cov_a.diagonal().amax().max(cov_b.diagonal().amax()));
    let regularized = min_eigenvalue(cov_a) <= tiny || min_eigenvalue(cov_b) <= tiny;
    let (ca, cb) = if regularized {
        let load = DMatrix::<f64>::identity(d, d) * COV_REGULARIZATION;
        (cov_a + &load, cov_b + &load)
    } else {
        (cov_a.clone(), cov_b.clone())
    };
    let ra = psd_sqrt(&ca);
    let inner = &ra * &cb * &ra;
    let cross = psd_sqrt(&inner).trace();
    let diff = mu_a - mu_b;
    let distance = diff.dot(&diff) + ca.trace() + cb.trace() - 2.0 * cross;
    if !distance.is_finite() {
        return Err(Error::NonFinite("Fréchet distance"));
    }
    Ok(FrechetResult {
        distance: distance.max(0.0),
        regularized,
    })
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FrechetResult> {
    let (mu_a, cov_a) = mean_cov(a)?;
    let (mu_b, cov_b) = mean_cov(b)?;
    frechet_from_stats(&mu_a, &cov_a, &mu_b, &cov_b)
}
