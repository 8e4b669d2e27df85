//! 2-D convolution over NCHW tensors.
//!
//! Three primitives close under differentiation: the forward convolution
//! `conv(x, w)`, its input adjoint `conv_input_grad(g, w)` and its weight
//! adjoint `conv_weight_grad(x, g)`. All three are bilinear and satisfy
//! `<g, conv(x, w)> = <conv_input_grad(g, w), x> = <conv_weight_grad(x, g), w>`,
//! which gives every backward rule in terms of the other two.

use crate::element::{gemm, Element};
use crate::tensor::{Backward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize, kernel: usize) -> usize {
        assert!(
            input + 2 * self.pad >= kernel,
            "conv kernel {kernel} larger than padded input {input}"
        );
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

/// Column buffer `[c*kh*kw, ho*wo]` for one image `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let (s, p) = (geom.stride, geom.pad as isize);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - p;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column buffer back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let (s, p) = (geom.stride, geom.pad as isize);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(kh: usize, kw: usize, geom: ConvGeom) -> bool {
    kh == 1 && kw == 1 && geom.stride == 1 && geom.pad == 0
}

fn conv_forward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> (Vec<T>, Vec<usize>) {
    let [b, c, h, wd] = dims4(x.shape(), "conv2d input");
    let [o, c2, kh, kw] = dims4(w.shape(), "conv2d weight");
    assert_eq!(c, c2, "conv2d channels: input {:?}, weight {:?}", x.shape(), w.shape());
    let (ho, wo) = (geom.out_size(h, kh), geom.out_size(wd, kw));
    let xd = x.data();
    let wdata = w.data();
    let ckk = c * kh * kw;
    let mut out = vec![T::zero(); b * o * ho * wo];
    let mut col = if is_pointwise(kh, kw, geom) {
        Vec::new()
    } else {
        vec![T::zero(); ckk * ho * wo]
    };
    for bi in 0..b {
        let xb = &xd[bi * c * h * wd..(bi + 1) * c * h * wd];
        let ob = &mut out[bi * o * ho * wo..(bi + 1) * o * ho * wo];
        if col.is_empty() {
            gemm(o, ckk, ho * wo, &wdata, false, xb, false, ob, false);
        } else {
            im2col(xb, c, h, wd, kh, kw, geom, ho, wo, &mut col);
            gemm(o, ckk, ho * wo, &wdata, false, &col, false, ob, false);
        }
    }
    (out, vec![b, o, ho, wo])
}

fn conv_input_grad_forward<T: Element>(
    g: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
    in_hw: (usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let [b, o, ho, wo] = dims4(g.shape(), "conv_input_grad grad");
    let [o2, c, kh, kw] = dims4(w.shape(), "conv_input_grad weight");
    assert_eq!(o, o2, "conv_input_grad channels");
    let (h, wd) = in_hw;
    assert_eq!((geom.out_size(h, kh), geom.out_size(wd, kw)), (ho, wo), "conv_input_grad geometry");
    let gd = g.data();
    let wdata = w.data();
    let ckk = c * kh * kw;
    let mut out = vec![T::zero(); b * c * h * wd];
    let pointwise = is_pointwise(kh, kw, geom);
    let mut col = vec![T::zero(); if pointwise { 0 } else { ckk * ho * wo }];
    for bi in 0..b {
        let gb = &gd[bi * o * ho * wo..(bi + 1) * o * ho * wo];
        let xb = &mut out[bi * c * h * wd..(bi + 1) * c * h * wd];
        if pointwise {
            gemm(ckk, o, ho * wo, &wdata, true, gb, false, xb, false);
        } else {
            gemm(ckk, o, ho * wo, &wdata, true, gb, false, &mut col, false);
            col2im(&col, c, h, wd, kh, kw, geom, ho, wo, xb);
        }
    }
    (out, vec![b, c, h, wd])
}

fn conv_weight_grad_forward<T: Element>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    geom: ConvGeom,
    k_hw: (usize, usize),
) -> (Vec<T>, Vec<usize>) {
    let [b, c, h, wd] = dims4(x.shape(), "conv_weight_grad input");
    let [b2, o, ho, wo] = dims4(g.shape(), "conv_weight_grad grad");
    assert_eq!(b, b2, "conv_weight_grad batch");
    let (kh, kw) = k_hw;
    assert_eq!((geom.out_size(h, kh), geom.out_size(wd, kw)), (ho, wo), "conv_weight_grad geometry");
    let xd = x.data();
    let gd = g.data();
    let ckk = c * kh * kw;
    let mut out = vec![T::zero(); o * ckk];
    let pointwise = is_pointwise(kh, kw, geom);
    let mut col = vec![T::zero(); if pointwise { 0 } else { ckk * ho * wo }];
    for bi in 0..b {
        let xb = &xd[bi * c * h * wd..(bi + 1) * c * h * wd];
        let gb = &gd[bi * o * ho * wo..(bi + 1) * o * ho * wo];
        if pointwise {
            gemm(o, ho * wo, ckk, gb, false, xb, true, &mut out, bi > 0);
        } else {
            im2col(xb, c, h, wd, kh, kw, geom, ho, wo, &mut col);
            gemm(o, ho * wo, ckk, gb, false, &col, true, &mut out, bi > 0);
        }
    }
    (out, vec![o, c, kh, kw])
}

fn dims4(shape: &[usize], what: &str) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "{what} must be 4-D, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}

struct ConvBackward {
    geom: ConvGeom,
}

impl<T: Element> Backward<T> for ConvBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let gx = x
            .requires_grad()
            .then(|| g.conv2d_input_grad(w, self.geom, (x.dim(2), x.dim(3))));
        let gw = w
            .requires_grad()
            .then(|| x.conv2d_weight_grad(g, self.geom, (w.dim(2), w.dim(3))));
        vec![gx, gw]
    }
}

struct ConvInputGradBackward {
    geom: ConvGeom,
}

impl<T: Element> Backward<T> for ConvInputGradBackward {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }

    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, h: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (g, w) = (&inputs[0], &inputs[1]);
        let gg = g.requires_grad().then(|| h.conv2d(w, self.geom));
        let gw = w
            .requires_grad()
            .then(|| h.conv2d_weight_grad(g, self.geom, (w.dim(2), w.dim(3))));
        vec![gg, gw]
    }
}

struct ConvWeightGradBackward {
    geom: ConvGeom,
}

impl<T: Element> Backward<T> for ConvWeightGradBackward {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }

    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, h: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, g) = (&inputs[0], &inputs[1]);
        let gx = x
            .requires_grad()
            .then(|| g.conv2d_input_grad(h, self.geom, (x.dim(2), x.dim(3))));
        let gg = g.requires_grad().then(|| x.conv2d(h, self.geom));
        vec![gx, gg]
    }
}

impl<T: Element> Tensor<T> {
    /// Cross-correlation of `[b, c, h, w]` input with `[o, c, kh, kw]` weight.
    pub fn conv2d(&self, weight: &Tensor<T>, geom: ConvGeom) -> Tensor<T> {
        let (data, shape) = conv_forward(self, weight, geom);
        Tensor::from_op(
            data,
            shape,
            vec![self.clone(), weight.clone()],
            ConvBackward { geom },
        )
    }

    /// Gradient of `conv2d` w.r.t. its input, given output gradient `self`.
    pub fn conv2d_input_grad(&self, weight: &Tensor<T>, geom: ConvGeom, in_hw: (usize, usize)) -> Tensor<T> {
        let (data, shape) = conv_input_grad_forward(self, weight, geom, in_hw);
        Tensor::from_op(
            data,
            shape,
            vec![self.clone(), weight.clone()],
            ConvInputGradBackward { geom },
        )
    }

    /// Gradient of `conv2d` w.r.t. its weight; `self` is the conv input and
    /// `grad` the output gradient.
    pub fn conv2d_weight_grad(&self, grad: &Tensor<T>, geom: ConvGeom, k_hw: (usize, usize)) -> Tensor<T> {
        let (data, shape) = conv_weight_grad_forward(self, grad, geom, k_hw);
        Tensor::from_op(
            data,
            shape,
            vec![self.clone(), grad.clone()],
            ConvWeightGradBackward { geom },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_conv(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], geom: ConvGeom) -> Vec<f64> {
        let [b, c, h, wd] = xs;
        let [o, _, kh, kw] = ws;
        let ho = geom.out_size(h, kh);
        let wo = geom.out_size(wd, kw);
        let mut out = vec![0.0; b * o * ho * wo];
        for bi in 0..b {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((oi * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((bi * o + oi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let xs = [2, 3, 5, 6];
        let ws = [4, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..ws.iter().product()).map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6).collect();
        for geom in [ConvGeom { stride: 1, pad: 1 }, ConvGeom { stride: 2, pad: 0 }, ConvGeom { stride: 2, pad: 1 }] {
            let got = Tensor::<f64>::from_vec(x.clone(), &xs).conv2d(&Tensor::from_vec(w.clone(), &ws), geom);
            let want = naive_conv(&x, xs, &w, ws, geom);
            for (a, b) in got.to_vec().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identities_hold() {
        let geom = ConvGeom { stride: 2, pad: 1 };
        let x = Tensor::<f64>::from_vec((0..2 * 2 * 7 * 7).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 2, 7, 7]);
        let w = Tensor::<f64>::from_vec((0..3 * 2 * 3 * 3).map(|i| (i as f64 * 0.91).cos()).collect(), &[3, 2, 3, 3]);
        let y = x.conv2d(&w, geom);
        let g = Tensor::<f64>::from_vec((0..y.numel()).map(|i| (i as f64 * 1.3).sin()).collect(), y.shape());
        let lhs = y.mul(&g).sum_all().item();
        let via_x = g.conv2d_input_grad(&w, geom, (7, 7)).mul(&x).sum_all().item();
        let via_w = x.conv2d_weight_grad(&g, geom, (3, 3)).mul(&w).sum_all().item();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }
}
