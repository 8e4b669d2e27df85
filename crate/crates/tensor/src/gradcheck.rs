//! Central finite differences for verifying backward rules (64-bit only).

use crate::autograd::grad;
use crate::tensor::Tensor;

/// Comparison of analytic and numeric gradients over all inputs.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_abs_err: f64,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)`.
    pub rel_err: f64,
}

/// Numeric gradient of scalar `f` at `inputs` by central differences.
///
/// Probes are passed as trainable leaves so `f` may differentiate
/// internally (for checking second derivatives).
pub fn numeric_grad(
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Vec<Vec<f64>> {
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.to_vec()).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut gk = vec![0.0; base[k].len()];
        for i in 0..base[k].len() {
            let probe = |delta: f64| {
                let shifted: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            let mut d = base[k].clone();
                            d[i] += delta;
                            Tensor::var(d, t.shape())
                        } else {
                            Tensor::var(base[j].clone(), t.shape())
                        }
                    })
                    .collect();
                f(&shifted).item()
            };
            gk[i] = (probe(eps) - probe(-eps)) / (2.0 * eps);
        }
        out.push(gk);
    }
    out
}

/// Checks the autograd gradient of `f` against central differences.
/// `inputs` must be leaves that require grad.
pub fn check(f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>, inputs: &[Tensor<f64>], eps: f64) -> GradCheck {
    let out = f(inputs);
    let analytic: Vec<Vec<f64>> = grad(&out, inputs)
        .into_iter()
        .zip(inputs)
        .map(|(g, t)| g.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let numeric = numeric_grad(f, inputs, eps);
    compare(&analytic, &numeric)
}

pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> GradCheck {
    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.iter().zip(n) {
            diff2 += (x - y) * (x - y);
            a2 += x * x;
            n2 += y * y;
            max_abs = max_abs.max((x - y).abs());
        }
    }
    GradCheck {
        max_abs_err: max_abs,
        rel_err: diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-12),
    }
}
