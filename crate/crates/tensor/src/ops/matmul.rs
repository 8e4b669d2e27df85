use crate::element::{gemm, Element};
use crate::tensor::{Backward, Tensor};

/// `op(a) * op(b)` for matrices, with optional transposes.
struct MatMulBackward {
    ta: bool,
    tb: bool,
}

impl<T: Element> Backward<T> for MatMulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (ga, gb) = match (self.ta, self.tb) {
            (false, false) => (g.matmul_t(b, false, true), a.matmul_t(g, true, false)),
            (true, false) => (b.matmul_t(g, false, true), a.matmul_t(g, false, false)),
            (false, true) => (g.matmul_t(b, false, false), g.matmul_t(a, true, false)),
            (true, true) => (b.matmul_t(g, true, true), g.matmul_t(a, true, true)),
        };
        vec![
            a.requires_grad().then_some(ga),
            b.requires_grad().then_some(gb),
        ]
    }
}

impl<T: Element> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with either operand optionally transposed.
    pub fn matmul_t(&self, other: &Tensor<T>, trans_a: bool, trans_b: bool) -> Tensor<T> {
        assert_eq!(self.ndim(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(other.ndim(), 2, "matmul rhs must be 2-D, got {:?}", other.shape());
        let (m, k) = if trans_a {
            (self.dim(1), self.dim(0))
        } else {
            (self.dim(0), self.dim(1))
        };
        let (k2, n) = if trans_b {
            (other.dim(1), other.dim(0))
        } else {
            (other.dim(0), other.dim(1))
        };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", self.shape(), other.shape());
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data(), trans_a, &other.data(), trans_b, &mut out, false);
        Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            MatMulBackward {
                ta: trans_a,
                tb: trans_b,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        let a = Tensor::<f64>::from_vec(vec![1., 2., 3., 4., 5., 6.], &[2, 3]);
        let b = Tensor::<f64>::from_vec(vec![1., 0., 0., 1., 1., 1.], &[3, 2]);
        assert_eq!(a.matmul(&b).to_vec(), vec![4., 5., 10., 11.]);
        assert_eq!(a.matmul_t(&a, false, true).to_vec(), vec![14., 32., 32., 77.]);
        assert_eq!(a.matmul_t(&a, true, false).shape(), &[3, 3]);
    }
}
