use super::graph::{Graph, Op, Var};
use super::tensor::{strides, Real, Tensor};
use crate::error::{Error, Result};

/// Split `shape` around `axis` into (outer, axis length, inner).
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl<R: Real> Graph<R> {
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape("concat", format!("{first:?} with {s:?}")));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = around(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = around(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Narrow { a, axis, start })
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if self.shape(a).get(axis) != Some(&total) {
            return Err(Error::shape(
                "split",
                format!("sizes {sizes:?} on axis {axis} of {:?}", self.shape(a)),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(a, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} of {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.value(a).data(), &shape, perm);
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
        )
    }

    /// Swap two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let n = self.shape(a).len();
        if d0 >= n || d1 >= n {
            return Err(Error::shape("transpose", format!("axes {d0}, {d1} of rank {n}")));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(value, Op::Reshape { a })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: R = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = around(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..][..inner];
                for (d, &v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::SumAxis { a, axis })
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis}")))? as f64;
        let s = self.sum_axis(a, axis)?;
        self.mul_scalar(s, 1.0 / n)
    }

    /// Gather relative-position scores into absolute key positions.
    ///
    /// Input `[..., T, 2T - 1]` where column `j` holds offset `j - (T - 1)`;
    /// output `[..., T, T]` with `out[q][k] = in[q][k - q + T - 1]`.
    pub fn rel_shift(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 1] + 1 != 2 * shape[r - 2] {
            return Err(Error::shape("rel_shift", format!("{shape:?}")));
        }
        let t = shape[r - 2];
        let w = 2 * t - 1;
        let src = self.value(a).data();
        let outer = src.len() / (t * w);
        let mut out = Vec::with_capacity(outer * t * t);
        for o in 0..outer {
            for q in 0..t {
                let row = &src[(o * t + q) * w..][..w];
                out.extend_from_slice(&row[t - 1 - q..t - 1 - q + t]);
            }
        }
        let mut out_shape = shape;
        out_shape[r - 1] = t;
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::RelShift { a })
    }

    /// Overlap-add frames `[n_frames, width]` with hop `hop` into `[out_len]`.
    ///
    /// Samples past `out_len` are dropped; uncovered samples are zero.
    pub fn overlap_add(&mut self, a: Var, hop: usize, out_len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || hop == 0 {
            return Err(Error::shape("overlap_add", format!("{shape:?}, hop {hop}")));
        }
        let (n_frames, width) = (shape[0], shape[1]);
        let src = self.value(a).data();
        let mut out = vec![R::zero(); out_len];
        for t in 0..n_frames {
            for k in 0..width {
                if let Some(o) = out.get_mut(t * hop + k) {
                    *o += src[t * width + k];
                }
            }
        }
        let value = Tensor::new(&[out_len], out)?;
        self.push(value, Op::OverlapAdd { a, hop })
    }
}

fn permute_data<R: Real>(src: &[R], shape: &[usize], perm: &[usize]) -> Vec<R> {
    let n = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // stride in the source for each output axis
    let s: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let last = n - 1;
    let (inner_len, inner_stride) = (out_shape[last], s[last]);
    let mut idx = vec![0usize; n];
    let mut base = 0usize;
    while out.len() < total {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|i| src[base + i * inner_stride]));
        }
        // advance the outer odometer
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            base += s[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= s[d] * idx[d];
            idx[d] = 0;
        }
        if n == 1 {
            break;
        }
    }
    out
}

pub(crate) fn concat_backward<R: Real>(
    g: &Graph<R>,
    inputs: &[Var],
    axis: usize,
    node: usize,
    grad: &[R],
) -> Vec<(Var, Vec<R>)> {
    let out_shape = g.nodes[node].value.shape();
    let (outer, _, inner) = around(out_shape, axis);
    let mut parts: Vec<Vec<R>> = inputs
        .iter()
        .map(|&v| Vec::with_capacity(g.value(v).numel()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (p, &v) in parts.iter_mut().zip(inputs) {
            let len = g.shape(v)[axis] * inner;
            p.extend_from_slice(&grad[pos..pos + len]);
            pos += len;
        }
    }
    inputs.iter().copied().zip(parts).collect()
}

pub(crate) fn narrow_backward<R: Real>(
    g: &Graph<R>,
    a: Var,
    axis: usize,
    start: usize,
    node: usize,
    grad: &[R],
) -> Vec<R> {
    let shape = g.shape(a);
    let (outer, n, inner) = around(shape, axis);
    let len = g.nodes[node].value.shape()[axis];
    let mut out = vec![R::zero(); g.value(a).numel()];
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

pub(crate) fn permute_backward<R: Real>(g: &Graph<R>, a: Var, perm: &[usize], grad: &[R]) -> Vec<R> {
    let shape = g.shape(a);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    permute_data(grad, &out_shape, &inverse)
}

pub(crate) fn sum_axis_backward<R: Real>(g: &Graph<R>, a: Var, axis: usize, grad: &[R]) -> Vec<R> {
    let (outer, n, inner) = around(g.shape(a), axis);
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend_from_slice(&grad[o * inner..(o + 1) * inner]);
        }
    }
    out
}

pub(crate) fn rel_shift_backward<R: Real>(g: &Graph<R>, a: Var, grad: &[R]) -> Vec<R> {
    let shape = g.shape(a);
    let t = shape[shape.len() - 2];
    let w = 2 * t - 1;
    let mut out = vec![R::zero(); g.value(a).numel()];
    let outer = out.len() / (t * w);
    for o in 0..outer {
        for q in 0..t {
            let dst = &mut out[(o * t + q) * w + t - 1 - q..][..t];
            dst.copy_from_slice(&grad[(o * t + q) * t..][..t]);
        }
    }
    out
}

pub(crate) fn overlap_add_backward<R: Real>(g: &Graph<R>, a: Var, hop: usize, grad: &[R]) -> Vec<R> {
    let shape = g.shape(a);
    let (n_frames, width) = (shape[0], shape[1]);
    let mut out = vec![R::zero(); n_frames * width];
    for t in 0..n_frames {
        for k in 0..width {
            if let Some(&gv) = grad.get(t * hop + k) {
                out[t * width + k] = gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let shape = [2, 3, 4];
        let src: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let out = permute_data(&src, &shape, &[2, 0, 1]);
        // out[k][i][j] = src[i][j][k]
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(out[(k * 2 + i) * 3 + j], src[(i * 3 + j) * 4 + k]);
                }
            }
        }
    }

    #[test]
    fn rel_shift_layout() {
        let mut g = Graph::<f64>::new();
        // T = 3, columns are offsets -2..=2
        let data: Vec<f64> = (0..3).flat_map(|q| (0..5).map(move |j| (q * 10 + j) as f64)).collect();
        let a = g.constant(Tensor::new(&[3, 5], data).unwrap());
        let s = g.rel_shift(a).unwrap();
        let v = g.value(s).data();
        for q in 0..3 {
            for k in 0..3 {
                let j = k + 2 - q;
                assert_eq!(v[q * 3 + k], (q * 10 + j) as f64);
            }
        }
    }
}
