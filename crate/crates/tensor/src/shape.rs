//! Shape arithmetic and strided iteration helpers.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` viewed with shape `target` (zero on broadcast axes).
///
/// Panics if `src` does not broadcast to `target`.
pub fn broadcast_strides(src: &[usize], target: &[usize]) -> Vec<usize> {
    assert!(
        src.len() <= target.len(),
        "cannot broadcast {src:?} to {target:?}"
    );
    let offset = target.len() - src.len();
    let cs = contiguous_strides(src);
    let mut out = vec![0; target.len()];
    for i in 0..src.len() {
        let (s, t) = (src[i], target[i + offset]);
        if s == t {
            out[i + offset] = cs[i];
        } else if s == 1 {
            out[i + offset] = 0;
        } else {
            panic!("cannot broadcast {src:?} to {target:?}");
        }
    }
    out
}

/// Merges adjacent axes that are laid out contiguously for every operand.
fn coalesce(shape: &[usize], strides: &[&[usize]]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut out_shape: Vec<usize> = Vec::with_capacity(shape.len());
    let mut out_strides: Vec<Vec<usize>> = vec![Vec::with_capacity(shape.len()); strides.len()];
    for (axis, &len) in shape.iter().enumerate() {
        if len == 1 {
            continue;
        }
        let mergeable = !out_shape.is_empty()
            && strides.iter().enumerate().all(|(k, s)| {
                let prev = *out_strides[k].last().unwrap();
                prev == s[axis] * len
            });
        if mergeable {
            let last = out_shape.len() - 1;
            out_shape[last] *= len;
            for (k, s) in strides.iter().enumerate() {
                *out_strides[k].last_mut().unwrap() = s[axis];
            }
        } else {
            out_shape.push(len);
            for (k, s) in strides.iter().enumerate() {
                out_strides[k].push(s[axis]);
            }
        }
    }
    (out_shape, out_strides)
}

/// Visits every index of `shape` in row-major order, calling
/// `f(linear, offset_a, offset_b)` with offsets under strides `sa`, `sb`.
pub fn for_each2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    if numel(shape) == 0 {
        return;
    }
    let lin = contiguous_strides(shape);
    let (shape, st) = coalesce(shape, &[&lin, sa, sb]);
    let nd = shape.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = shape[nd - 1];
    let (s0, s1, s2) = (st[0][nd - 1], st[1][nd - 1], st[2][nd - 1]);
    let outer_dims = &shape[..nd - 1];
    let outer: usize = numel(outer_dims);
    let mut idx = vec![0usize; nd - 1];
    let (mut o0, mut o1, mut o2) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(o0 + j * s0, o1 + j * s1, o2 + j * s2);
        }
        // odometer increment
        let mut ax = nd - 1;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            o0 += st[0][ax];
            o1 += st[1][ax];
            o2 += st[2][ax];
            if idx[ax] < outer_dims[ax] {
                break;
            }
            o0 -= st[0][ax] * idx[ax];
            o1 -= st[1][ax] * idx[ax];
            o2 -= st[2][ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn strided_visit_matches_naive() {
        let shape = [2, 3, 4];
        let sa = broadcast_strides(&[3, 1], &shape);
        let sb = contiguous_strides(&shape);
        let mut seen = vec![];
        for_each2(&shape, &sa, &sb, |o, a, b| seen.push((o, a, b)));
        let mut expect = vec![];
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    expect.push((i * 12 + j * 4 + k, j, i * 12 + j * 4 + k));
                }
            }
        }
        assert_eq!(seen, expect);
    }
}
