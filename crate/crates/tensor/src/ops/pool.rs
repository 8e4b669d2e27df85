//! 2x spatial resampling on the last two axes. `avg_pool2` and `upsample2`
//! are adjoint up to a factor of four.

use crate::element::Element;
use crate::tensor::{Backward, Tensor};

struct AvgPoolBackward;

impl<T: Element> Backward<T> for AvgPoolBackward {
    fn name(&self) -> &'static str {
        "avg_pool2"
    }
    fn backward(&self, _i: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.upsample2().mul_scalar(0.25))]
    }
}

struct UpsampleBackward;

impl<T: Element> Backward<T> for UpsampleBackward {
    fn name(&self) -> &'static str {
        "upsample2"
    }
    fn backward(&self, _i: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.avg_pool2().mul_scalar(4.0))]
    }
}

fn plane_dims(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "spatial op on {shape:?}");
    let nd = shape.len();
    let planes = shape[..nd - 2].iter().product();
    (planes, shape[nd - 2], shape[nd - 1])
}

impl<T: Element> Tensor<T> {
    /// 2x2 mean pooling with stride 2.
    pub fn avg_pool2(&self) -> Tensor<T> {
        let (planes, h, w) = plane_dims(self.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got {:?}", self.shape());
        let (ho, wo) = (h / 2, w / 2);
        let src = self.data();
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    let i = 2 * y * w + 2 * x;
                    d[y * wo + x] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        Tensor::from_op(out, shape, vec![self.clone()], AvgPoolBackward)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Tensor<T> {
        let (planes, h, w) = plane_dims(self.shape());
        let (ho, wo) = (h * 2, w * 2);
        let src = self.data();
        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    d[y * wo + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        Tensor::from_op(out, shape, vec![self.clone()], UpsampleBackward)
    }
}
