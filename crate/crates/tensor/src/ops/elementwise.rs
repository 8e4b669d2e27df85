//! Broadcasting binary arithmetic, scalar arithmetic and unary maps.

use crate::element::Element;
use crate::shape::{broadcast_shape, broadcast_strides, for_each2};
use crate::tensor::{Backward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    #[inline(always)]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

fn binary_forward<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: BinaryKind) -> (Vec<T>, Vec<usize>) {
    let da = a.data();
    let db = b.data();
    if a.shape() == b.shape() {
        let out = da.iter().zip(db.iter()).map(|(&x, &y)| kind.apply(x, y)).collect();
        return (out, a.shape().to_vec());
    }
    let shape = broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "{:?}: shapes {:?} and {:?} do not broadcast",
            kind,
            a.shape(),
            b.shape()
        )
    });
    if db.len() == 1 && shape == a.shape() {
        let y = db[0];
        return (da.iter().map(|&x| kind.apply(x, y)).collect(), shape);
    }
    if da.len() == 1 && shape == b.shape() {
        let x = da[0];
        return (db.iter().map(|&y| kind.apply(x, y)).collect(), shape);
    }
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let mut out = vec![T::zero(); shape.iter().product()];
    for_each2(&shape, &sa, &sb, |o, ia, ib| {
        out[o] = kind.apply(da[ia], db[ib]);
    });
    (out, shape)
}

struct BinaryBackward(BinaryKind);

impl<T: Element> Backward<T> for BinaryBackward {
    fn name(&self) -> &'static str {
        match self.0 {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let want_a = a.requires_grad();
        let want_b = b.requires_grad();
        let (ga, gb) = match self.0 {
            BinaryKind::Add => (
                want_a.then(|| g.sum_to(a.shape())),
                want_b.then(|| g.sum_to(b.shape())),
            ),
            BinaryKind::Sub => (
                want_a.then(|| g.sum_to(a.shape())),
                want_b.then(|| g.neg().sum_to(b.shape())),
            ),
            BinaryKind::Mul => (
                want_a.then(|| g.mul(b).sum_to(a.shape())),
                want_b.then(|| g.mul(a).sum_to(b.shape())),
            ),
            BinaryKind::Div => (
                want_a.then(|| g.div(b).sum_to(a.shape())),
                want_b.then(|| g.mul(a).div(&b.mul(b)).neg().sum_to(b.shape())),
            ),
        };
        vec![ga, gb]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    Square,
    Powf(f64),
    AddScalar(f64),
    MulScalar(f64),
}

impl UnaryKind {
    #[inline(always)]
    fn apply<T: Element>(self, x: T) -> T {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Square => x * x,
            UnaryKind::Powf(p) => x.powf(T::lit(p)),
            UnaryKind::AddScalar(c) => x + T::lit(c),
            UnaryKind::MulScalar(c) => x * T::lit(c),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Square => "square",
            UnaryKind::Powf(_) => "powf",
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::MulScalar(_) => "mul_scalar",
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Element>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

struct UnaryBackward(UnaryKind);

impl<T: Element> Backward<T> for UnaryBackward {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = &inputs[0];
        let gx = match self.0 {
            UnaryKind::Neg => g.neg(),
            UnaryKind::Exp => g.mul(out),
            UnaryKind::Log => g.div(x),
            UnaryKind::Sqrt => g.div(out).mul_scalar(0.5),
            UnaryKind::Tanh => g.mul(&out.square().neg().add_scalar(1.0)),
            UnaryKind::Sigmoid => g.mul(&out.mul(&out.neg().add_scalar(1.0))),
            UnaryKind::Softplus => g.mul(&x.sigmoid()),
            UnaryKind::Square => g.mul(x).mul_scalar(2.0),
            UnaryKind::Powf(p) => g.mul(&x.powf(p - 1.0)).mul_scalar(p),
            UnaryKind::AddScalar(_) => g.clone(),
            UnaryKind::MulScalar(c) => g.mul_scalar(c),
        };
        vec![Some(gx)]
    }
}

fn unary<T: Element>(x: &Tensor<T>, kind: UnaryKind) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), vec![x.clone()], UnaryBackward(kind))
}

/// Leaky ReLU; the backward multiplies by a constant slope mask, so higher
/// derivatives are exact (zero curvature away from the kink).
struct LeakyReluBackward {
    slope: f64,
}

impl<T: Element> Backward<T> for LeakyReluBackward {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }

    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let slope = T::lit(self.slope);
        let mask: Vec<T> = inputs[0]
            .data()
            .iter()
            .map(|&v| if v > T::zero() { T::one() } else { slope })
            .collect();
        let mask = Tensor::from_vec(mask, inputs[0].shape());
        vec![Some(g.mul(&mask))]
    }
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinaryKind) -> Tensor<T> {
        let (data, shape) = binary_forward(self, other, kind);
        Tensor::from_op(data, shape, vec![self.clone(), other.clone()], BinaryBackward(kind))
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, UnaryKind::Neg)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, UnaryKind::Exp)
    }

    pub fn log(&self) -> Tensor<T> {
        unary(self, UnaryKind::Log)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, UnaryKind::Sqrt)
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, UnaryKind::Sigmoid)
    }

    pub fn softplus(&self) -> Tensor<T> {
        unary(self, UnaryKind::Softplus)
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, UnaryKind::Square)
    }

    pub fn powf(&self, p: f64) -> Tensor<T> {
        unary(self, UnaryKind::Powf(p))
    }

    /// `1 / sqrt(x)`.
    pub fn rsqrt(&self) -> Tensor<T> {
        unary(self, UnaryKind::Powf(-0.5))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        unary(self, UnaryKind::AddScalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        unary(self, UnaryKind::MulScalar(c))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::lit(slope);
        let data = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * s })
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            LeakyReluBackward { slope },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_add_and_scalar_paths() {
        let a = Tensor::<f64>::from_vec(vec![1., 2., 3., 4., 5., 6.], &[2, 3]);
        let b = Tensor::<f64>::from_vec(vec![10., 20., 30.], &[3]);
        assert_eq!(a.add(&b).to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        let c = Tensor::<f64>::from_vec(vec![1., 2.], &[2, 1]);
        assert_eq!(a.mul(&c).to_vec(), vec![1., 2., 3., 8., 10., 12.]);
        let s = Tensor::<f64>::scalar(2.0);
        assert_eq!(s.sub(&a).to_vec(), vec![1., 0., -1., -2., -3., -4.]);
    }

    #[test]
    fn stable_softplus_and_sigmoid() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(-1000.0f64), 0.0);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }
}
