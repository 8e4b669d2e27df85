//! Layers with equalized learning rate: weights are stored at unit scale and
//! multiplied by `lr_mul / sqrt(fan_in)` on every forward pass.

use motionbank_tensor::{ConvGeom, Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Ordered `(name, leaf)` pairs; the order is the checkpoint order.
pub type ParamList<T> = Vec<(String, Tensor<T>)>;

pub(crate) const LRELU_SLOPE: f64 = 0.2;
pub(crate) const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;

pub(crate) fn randn_vec<T: Element>(len: usize, scale: f64, rng: &mut impl Rng) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(scale * z)
        })
        .collect()
}

/// Leaky ReLU rescaled to preserve second moments.
pub fn lrelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.leaky_relu(LRELU_SLOPE).mul_scalar(LRELU_GAIN)
}

/// `x / sqrt(mean(x², axis 1) + 1e-8)` for `[B, C]` input.
pub fn pixel_norm<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.mul(&x.square().mean_axes(&[1], true).add_scalar(1e-8).rsqrt())
}

pub struct EqualLinear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub lr_mul: f64,
    pub activate: bool,
}

impl<T: Element> EqualLinear<T> {
    pub fn new(inp: usize, out: usize, bias_init: f64, lr_mul: f64, activate: bool, rng: &mut impl Rng) -> Self {
        EqualLinear {
            weight: Tensor::var(randn_vec(out * inp, 1.0 / lr_mul, rng), &[out, inp]),
            bias: Tensor::var(vec![T::lit(bias_init / lr_mul); out], &[out]),
            lr_mul,
            activate,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn weight_scale(&self) -> f64 {
        self.lr_mul / (self.in_features() as f64).sqrt()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = x
            .matmul_t(&self.weight, false, true)
            .mul_scalar(self.weight_scale())
            .add(&self.bias.mul_scalar(self.lr_mul));
        if self.activate {
            lrelu(&y)
        } else {
            y
        }
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Stack of fused-activation linear layers; the last one is optionally
/// linear.
pub struct Mlp<T: Element> {
    pub layers: Vec<EqualLinear<T>>,
}

impl<T: Element> Mlp<T> {
    pub fn new(
        inp: usize,
        hidden: usize,
        out: usize,
        depth: usize,
        lr_mul: f64,
        linear_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(depth >= 1, "mlp needs at least one layer");
        let layers = (0..depth)
            .map(|i| {
                let fin = if i == 0 { inp } else { hidden };
                let fout = if i + 1 == depth { out } else { hidden };
                let act = !(linear_last && i + 1 == depth);
                EqualLinear::new(fin, fout, 0.0, lr_mul, act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.layers.iter().fold(x.clone(), |h, l| l.forward(&h))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("{prefix}.{i}"), out);
        }
    }
}

pub struct EqualConv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeom,
    pub activate: bool,
}

impl<T: Element> EqualConv2d<T> {
    pub fn new(inp: usize, out: usize, k: usize, bias: bool, activate: bool, rng: &mut impl Rng) -> Self {
        EqualConv2d {
            weight: Tensor::var(randn_vec(out * inp * k * k, 1.0, rng), &[out, inp, k, k]),
            bias: bias.then(|| Tensor::var(vec![T::zero(); out], &[out])),
            geom: ConvGeom { stride: 1, pad: k / 2 },
            activate,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let fan_in = self.weight.numel() / self.out_channels();
        let mut y = x.conv2d(&self.weight, self.geom).mul_scalar(1.0 / (fan_in as f64).sqrt());
        if let Some(b) = &self.bias {
            y = y.add(&b.reshape(&[1, b.numel(), 1, 1]));
        }
        if self.activate {
            lrelu(&y)
        } else {
            y
        }
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

/// Convolution whose input channels are scaled by a per-sample style and,
/// optionally, whose output channels are renormalized to unit kernel norm.
///
/// Computed as `demod ⊙ conv(x ⊙ s, w)`, which equals convolving with the
/// per-sample kernel `w_oi · s_i · demod_o`.
pub struct ModulatedConv<T: Element> {
    pub weight: Tensor<T>,
    pub affine: EqualLinear<T>,
    pub demodulate: bool,
    pub upsample: bool,
}

impl<T: Element> ModulatedConv<T> {
    pub fn new(
        inp: usize,
        out: usize,
        k: usize,
        style_dim: usize,
        demodulate: bool,
        upsample: bool,
        rng: &mut impl Rng,
    ) -> Self {
        ModulatedConv {
            weight: Tensor::var(randn_vec(out * inp * k * k, 1.0, rng), &[out, inp, k, k]),
            affine: EqualLinear::new(style_dim, inp, 1.0, 1.0, false, rng),
            demodulate,
            upsample,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2])
    }

    fn scale(&self) -> f64 {
        let (_, i, k) = self.dims();
        1.0 / ((i * k * k) as f64).sqrt()
    }

    /// `x: [F, C_in, H, W]`, `w: [F, style_dim]`.
    pub fn forward(&self, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
        let (o, i, k) = self.dims();
        let f = x.dim(0);
        let style = self.affine.forward(w);
        let x = if self.upsample { x.upsample2() } else { x.clone() };
        let xs = x.mul(&style.reshape(&[f, i, 1, 1]));
        let weight = self.weight.mul_scalar(self.scale());
        let y = xs.conv2d(&weight, ConvGeom { stride: 1, pad: k / 2 });
        if !self.demodulate {
            return y;
        }
        // sum_{i,k} (w_oik s_i)² = (s²) · (sum_k w_oik²)ᵀ
        let wsq = weight.square().sum_axes(&[2, 3], false);
        let demod = style.square().matmul_t(&wsq, false, true).add_scalar(1e-8).rsqrt();
        y.mul(&demod.reshape(&[f, o, 1, 1]))
    }

    /// Explicit per-sample kernels `[F, C_out, C_in, k, k]` after modulation
    /// and (if enabled) demodulation, flattened.
    pub fn effective_kernels(&self, w: &Tensor<T>) -> Vec<f64> {
        let (o, i, k) = self.dims();
        let style = self.affine.forward(w).to_f64_vec();
        let weight = self.weight.to_f64_vec();
        let scale = self.scale();
        let f = w.dim(0);
        let kk = k * k;
        let mut out = vec![0.0; f * o * i * kk];
        for b in 0..f {
            for oc in 0..o {
                let base = (b * o + oc) * i * kk;
                for ic in 0..i {
                    for q in 0..kk {
                        out[base + ic * kk + q] = weight[(oc * i + ic) * kk + q] * scale * style[b * i + ic];
                    }
                }
                if self.demodulate {
                    let norm2: f64 = out[base..base + i * kk].iter().map(|v| v * v).sum();
                    let d = 1.0 / (norm2 + 1e-8).sqrt();
                    out[base..base + i * kk].iter_mut().for_each(|v| *v *= d);
                }
            }
        }
        out
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        self.affine.params(&format!("{prefix}.affine"), out);
    }
}

/// Gated recurrent unit with fused gate weights (order: reset, update, new).
pub struct Gru<T: Element> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
    pub hidden: usize,
}

impl<T: Element> Gru<T> {
    pub fn new(inp: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let mut draw = |len: usize| -> Vec<T> { (0..len).map(|_| T::lit(u.sample(rng))).collect() };
        Gru {
            w_ih: Tensor::var(draw(inp * 3 * hidden), &[inp, 3 * hidden]),
            w_hh: Tensor::var(draw(hidden * 3 * hidden), &[hidden, 3 * hidden]),
            b_ih: Tensor::var(draw(3 * hidden), &[3 * hidden]),
            b_hh: Tensor::var(draw(3 * hidden), &[3 * hidden]),
            hidden,
        }
    }

    /// One step: `x: [B, inp]`, `h: [B, hidden]`.
    pub fn step(&self, x: &Tensor<T>, h: &Tensor<T>) -> Tensor<T> {
        let hd = self.hidden;
        let gi = x.matmul(&self.w_ih).add(&self.b_ih);
        let gh = h.matmul(&self.w_hh).add(&self.b_hh);
        let r = gi.narrow(1, 0, hd).add(&gh.narrow(1, 0, hd)).sigmoid();
        let z = gi.narrow(1, hd, hd).add(&gh.narrow(1, hd, hd)).sigmoid();
        let n = gi.narrow(1, 2 * hd, hd).add(&r.mul(&gh.narrow(1, 2 * hd, hd))).tanh();
        // (1 - z) n + z h = n + z (h - n)
        n.add(&z.mul(&h.sub(&n)))
    }

    pub fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.clone()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.clone()));
        out.push((format!("{prefix}.b_ih"), self.b_ih.clone()));
        out.push((format!("{prefix}.b_hh"), self.b_hh.clone()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modulated_conv_matches_explicit_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ModulatedConv::<f64>::new(3, 4, 3, 5, true, false, &mut rng);
        let x = Tensor::<f64>::randn(&[2, 3, 5, 5], &mut rng);
        let w = Tensor::<f64>::randn(&[2, 5], &mut rng);
        let y = conv.forward(&x, &w).to_vec();
        let kernels = conv.effective_kernels(&w);
        for b in 0..2 {
            let kb = Tensor::<f64>::from_vec(kernels[b * 108..(b + 1) * 108].to_vec(), &[4, 3, 3, 3]);
            let xb = x.narrow(0, b, 1);
            let yb = xb.conv2d(&kb, ConvGeom { stride: 1, pad: 1 }).to_vec();
            for (a, e) in y[b * 100..(b + 1) * 100].iter().zip(&yb) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }
}
