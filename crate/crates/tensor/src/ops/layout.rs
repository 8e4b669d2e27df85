//! Shape manipulation, broadcasting, reductions and indexing.

use crate::element::Element;
use crate::shape::{broadcast_strides, contiguous_strides, for_each2, numel};
use crate::tensor::{Backward, Tensor};

struct ReshapeBackward;

impl<T: Element> Backward<T> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(inputs[0].shape()))]
    }
}

struct PermuteBackward {
    inverse: Vec<usize>,
}

impl<T: Element> Backward<T> for PermuteBackward {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, _i: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.permute(&self.inverse))]
    }
}

struct BroadcastBackward;

impl<T: Element> Backward<T> for BroadcastBackward {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.sum_to(inputs[0].shape()))]
    }
}

struct SumToBackward;

impl<T: Element> Backward<T> for SumToBackward {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.broadcast_to(inputs[0].shape()))]
    }
}

struct IndexSelectBackward {
    axis: usize,
    index: Vec<usize>,
}

impl<T: Element> Backward<T> for IndexSelectBackward {
    fn name(&self) -> &'static str {
        "index_select"
    }
    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let len = inputs[0].dim(self.axis);
        vec![Some(g.index_scatter(self.axis, &self.index, len))]
    }
}

struct IndexScatterBackward {
    axis: usize,
    index: Vec<usize>,
}

impl<T: Element> Backward<T> for IndexScatterBackward {
    fn name(&self) -> &'static str {
        "index_scatter"
    }
    fn backward(&self, _i: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.index_select(self.axis, &self.index))]
    }
}

struct ConcatBackward {
    axis: usize,
}

impl<T: Element> Backward<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, inputs: &[Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut start = 0;
        inputs
            .iter()
            .map(|inp| {
                let len = inp.dim(self.axis);
                let idx: Vec<usize> = (start..start + len).collect();
                start += len;
                inp.requires_grad().then(|| g.index_select(self.axis, &idx))
            })
            .collect()
    }
}

/// (outer, axis_len, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(shape),
            self.numel(),
            "reshape {:?} -> {:?}",
            self.shape(),
            shape
        );
        if shape == self.shape() {
            return self.clone();
        }
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], ReshapeBackward)
    }

    pub fn flatten(&self) -> Tensor<T> {
        self.reshape(&[self.numel()])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let nd = self.ndim();
        assert_eq!(perm.len(), nd, "permute rank");
        let mut seen = vec![false; nd];
        for &p in perm {
            assert!(p < nd && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        let src_strides = contiguous_strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let in_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let lin = contiguous_strides(&out_shape);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for_each2(&out_shape, &lin, &in_strides, |o, _, i| out[o] = src[i]);
        drop(src);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Tensor::from_op(out, out_shape, vec![self.clone()], PermuteBackward { inverse })
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Tensor<T> {
        assert_eq!(self.ndim(), 2, "t() expects a matrix");
        self.permute(&[1, 0])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor<T> {
        if self.shape() == shape {
            return self.clone();
        }
        let strides = broadcast_strides(self.shape(), shape);
        let lin = contiguous_strides(shape);
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each2(shape, &lin, &strides, |o, _, i| out[o] = src[i]);
        drop(src);
        Tensor::from_op(out, shape.to_vec(), vec![self.clone()], BroadcastBackward)
    }

    /// Sums over broadcast axes so the result has `shape` (the reverse of
    /// [`Tensor::broadcast_to`]).
    pub fn sum_to(&self, shape: &[usize]) -> Tensor<T> {
        if self.shape() == shape {
            return self.clone();
        }
        let out_strides = broadcast_strides(shape, self.shape());
        let lin = contiguous_strides(self.shape());
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each2(self.shape(), &lin, &out_strides, |_, i, o| out[o] = out[o] + src[i]);
        drop(src);
        Tensor::from_op(out, shape.to_vec(), vec![self.clone()], SumToBackward)
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum_all(&self) -> Tensor<T> {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    /// Sum over `axes`; reduced axes are kept with length 1 when `keepdim`.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Tensor<T> {
        let mut kept = self.shape().to_vec();
        for &a in axes {
            kept[a] = 1;
        }
        let s = self.sum_to(&kept);
        if keepdim {
            s
        } else {
            let squeezed: Vec<usize> = self
                .shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            s.reshape(&squeezed)
        }
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Tensor<T> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes, keepdim).mul_scalar(1.0 / count.max(1) as f64)
    }

    /// Gathers entries `index` along `axis` (indices may repeat).
    pub fn index_select(&self, axis: usize, index: &[usize]) -> Tensor<T> {
        let (outer, len, inner) = split_axis(self.shape(), axis);
        assert!(index.iter().all(|&i| i < len), "index_select out of range");
        let src = self.data();
        let mut out = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &i in index {
                let base = (o * len + i) * inner;
                out.extend_from_slice(&src[base..base + inner]);
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = index.len();
        Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            IndexSelectBackward {
                axis,
                index: index.to_vec(),
            },
        )
    }

    /// Adjoint of [`Tensor::index_select`]: scatters slices into a zero tensor
    /// whose `axis` has length `len`, summing repeated indices.
    pub fn index_scatter(&self, axis: usize, index: &[usize], len: usize) -> Tensor<T> {
        let (outer, n, inner) = split_axis(self.shape(), axis);
        assert_eq!(n, index.len(), "index_scatter index length");
        assert!(index.iter().all(|&i| i < len), "index_scatter out of range");
        let src = self.data();
        let mut out = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            for (k, &i) in index.iter().enumerate() {
                let s = (o * n + k) * inner;
                let d = (o * len + i) * inner;
                for j in 0..inner {
                    out[d + j] = out[d + j] + src[s + j];
                }
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            IndexScatterBackward {
                axis,
                index: index.to_vec(),
            },
        )
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &idx)
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.ndim(), first.len(), "concat rank");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (p, g) in parts.iter().zip(&guards) {
                let run = p.dim(axis) * inner;
                out.extend_from_slice(&g[o * run..(o + 1) * run]);
            }
        }
        drop(guards);
        Tensor::from_op(out, shape, parts.to_vec(), ConcatBackward { axis })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty(), "stack of nothing");
        let mut shape = vec![1];
        shape.extend_from_slice(parts[0].shape());
        let expanded: Vec<Tensor<T>> = parts.iter().map(|p| p.reshape(&shape)).collect();
        Tensor::concat(&expanded, 0)
    }
}
